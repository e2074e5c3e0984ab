# Tests for codelnet
