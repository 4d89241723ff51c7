import struct
from abc import ABC, abstractmethod
from typing import Any, Tuple

import numpy as np

from engine.exceptions import BundleFormatError

from .freq_table import FrequencyTable, build_freq_table


class EntropyCoder(ABC):
    """静态模型熵编码器基类（小整数字母表）"""
    name = "base"
    coder_id = -1

    def build_model(self, symbols) -> Any:
        """根据非空符号流建立概率模型"""
        return build_freq_table(symbols)

    @abstractmethod
    def encode(self, symbols, model) -> bytes:
        """用给定模型编码符号流的抽象方法
        Args:
            symbols: 一维整数数组，每个符号都必须在模型中
            model: build_model / read_model 的返回值
        Returns:
            编码后的字节串
        """
        pass

    @abstractmethod
    def decode(self, data: bytes, model, n: int) -> np.ndarray:
        """解码恰好 n 个符号的抽象方法
        Args:
            data: 编码后的字节串
            model: 编码时使用的模型
            n: 符号个数
        Returns:
            解码出的符号数组；数据损坏时抛出 CorruptStreamError
        """
        pass

    def write_model(self, model: FrequencyTable) -> bytes:
        freqs = model.freqs
        return struct.pack("<H", len(freqs)) + np.asarray(freqs, dtype="<u2").tobytes()

    def read_model(self, buf: bytes, offset: int) -> Tuple[FrequencyTable, int]:
        count, offset = _read_u16(buf, offset)
        end = offset + 2 * count
        if end > len(buf):
            raise BundleFormatError("frequency model runs past the end of its section")
        freqs = np.frombuffer(buf[offset:end], dtype="<u2").astype(np.int64)
        return FrequencyTable(freqs), end


def _read_u16(buf: bytes, offset: int) -> Tuple[int, int]:
    if offset + 2 > len(buf):
        raise BundleFormatError("model header runs past the end of its section")
    return struct.unpack_from("<H", buf, offset)[0], offset + 2
