#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
LLMクライアントモジュールパッケージ
"""

from .llm_client import (
    ChatRequest,
    ChatResponse,
    HttpChatBackend,
    LlmBackend,
    MockBackend,
    ReplayBackend,
    chat,
    create_backend,
)
