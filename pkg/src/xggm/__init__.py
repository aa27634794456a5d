"""Graph generative modeling for compositional OOD generalization in a toy VQA setting."""

__version__ = "0.1.0"
