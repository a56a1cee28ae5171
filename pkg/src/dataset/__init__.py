#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
データセットモジュールパッケージ

関数サンプルの入出力、公開データセットの取り込み、分割とバランス調整を提供します。
"""

from .samples import FunctionSample, load_public_dataset, read_samples, write_samples
from .splitting import BalanceReport, balance, split
