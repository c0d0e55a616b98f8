# ABOUTME: civitopic package - seeded topic modeling for citizen-proposal corpora
# ABOUTME: Package version, recorded in every saved model bundle
# SPDX-License-Identifier: MIT

__version__ = "0.1.0"
