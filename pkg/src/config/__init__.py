#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
設定モジュールパッケージ
"""

from .config_manager import DEFAULT_SETTINGS, DEFAULTS_DIR, ConfigManager, PipelineConfig
