"""Desk-scale masked-LM, prompt tuning and checkpoint containers."""
