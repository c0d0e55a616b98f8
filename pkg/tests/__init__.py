# ABOUTME: Test package for civitopic
# ABOUTME: Shared fixtures live in conftest.py, synthetic data in synthetic.py
# SPDX-License-Identifier: MIT
