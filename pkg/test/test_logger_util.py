#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
logger_util.pyのテストモジュール
"""

import logging
import os
import sys
import tempfile
import unittest
from unittest.mock import patch

import support  # noqa: F401  (sys.path の設定)

from src.utils.logger_util import resolve_level, setup_logger


class TestResolveLevel(unittest.TestCase):
    """環境変数からのレベル決定"""

    def test_default_is_info(self):
        with patch.dict(os.environ, {"DEBUG": "", "LOG_LEVEL": "", "DEBUG_MODULES": ""}):
            os.environ.pop("LOG_LEVEL")
            self.assertEqual(resolve_level("src.kg.retrieval"), logging.INFO)

    def test_debug_flag(self):
        with patch.dict(os.environ, {"DEBUG": "true"}):
            self.assertEqual(resolve_level("src.cli"), logging.DEBUG)

    def test_debug_modules_uses_short_name(self):
        with patch.dict(os.environ, {"DEBUG": "0", "LOG_LEVEL": "WARNING", "DEBUG_MODULES": "cli, retrieval"}):
            self.assertEqual(resolve_level("src.kg.retrieval"), logging.DEBUG)
            self.assertEqual(resolve_level("src.kg.cwe_ingest"), logging.WARNING)

    def test_invalid_level_falls_back_to_info(self):
        with patch.dict(os.environ, {"DEBUG": "0", "LOG_LEVEL": "chatty", "DEBUG_MODULES": ""}):
            with patch("sys.stderr") as stderr:
                self.assertEqual(resolve_level("src.cli"), logging.INFO)
            self.assertTrue(stderr.write.called)


class TestSetupLogger(unittest.TestCase):
    """ハンドラーの構成"""

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.addCleanup(self.temp_dir.cleanup)

    def _fresh(self, name):
        logger = logging.getLogger(name)
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()
        self.addCleanup(lambda: [logger.removeHandler(h) or h.close() for h in list(logger.handlers)])
        return name

    def test_console_goes_to_stderr_and_file_is_written(self):
        name = self._fresh("vulread.test.file")
        log_file = os.path.join(self.temp_dir.name, "logs", "run.log")
        with patch.dict(os.environ, {"LOG_FILE": log_file, "DEBUG": "0", "LOG_LEVEL": "INFO"}):
            logger = setup_logger(name)
        streams = [h.stream for h in logger.handlers if type(h) is logging.StreamHandler]
        self.assertEqual(streams, [sys.stderr])
        self.assertFalse(logger.propagate)

        logger.info("KGを読み込みました")
        for handler in logger.handlers:
            handler.flush()
        with open(log_file, encoding="utf-8") as f:
            self.assertIn("KGを読み込みました", f.read())

    def test_empty_log_file_disables_file_handler(self):
        name = self._fresh("vulread.test.nofile")
        with patch.dict(os.environ, {"LOG_FILE": ""}):
            logger = setup_logger(name)
        self.assertFalse(any(isinstance(h, logging.FileHandler) for h in logger.handlers))

    def test_handlers_attached_once(self):
        name = self._fresh("vulread.test.once")
        with patch.dict(os.environ, {"LOG_FILE": ""}):
            first = setup_logger(name)
            second = setup_logger(name)
        self.assertIs(first, second)
        self.assertEqual(len(second.handlers), 1)


if __name__ == "__main__":
    unittest.main()
