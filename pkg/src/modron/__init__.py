"""D&D 5e combat toolkit: dice, combat state, an Avrae-style command engine,
event-sourced session logs, transcript distillation, prompt rendering, and an
evaluation harness for command-generating models."""

__version__ = "0.1.0"
