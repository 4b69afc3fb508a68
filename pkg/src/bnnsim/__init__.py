"""Bit-exact simulator of a binarized neural network accelerator with a hybrid
SCM/SRAM memory, bit-error injection, memory self-test and a voltage-scaled
power model."""

__version__ = "0.1.0"
