from .base_coder import EntropyCoder
from .freq_table import FrequencyTable, build_freq_table, estimate_rate_bits
from .rans_coder import RansCoder, rans_decode, rans_encode
from .huffman_coder import HuffmanCoder, huffman_decode, huffman_encode
from .arith_coder import ArithCoder, arith_decode, arith_encode

from engine.exceptions import UnknownCoderError

# 编码器注册表
coder_registry = {
    'rans': RansCoder,
    'huffman': HuffmanCoder,
    'arith': ArithCoder,
}

CODER_IDS = {cls.coder_id: name for name, cls in coder_registry.items()}


def get_coder(key) -> EntropyCoder:
    """按注册名或 bundle 中的 id 获取编码器实例"""
    name = CODER_IDS.get(key) if isinstance(key, int) else key
    if name not in coder_registry:
        raise UnknownCoderError(key)
    return coder_registry[name]()


__all__ = [
    'EntropyCoder',
    'FrequencyTable',
    'build_freq_table',
    'estimate_rate_bits',
    'RansCoder',
    'HuffmanCoder',
    'ArithCoder',
    'rans_encode',
    'rans_decode',
    'huffman_encode',
    'huffman_decode',
    'arith_encode',
    'arith_decode',
    'coder_registry',
    'get_coder',
]
