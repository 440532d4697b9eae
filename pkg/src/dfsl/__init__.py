"""Text-to-SPARQL question answering over knowledge graphs with retrieved demonstrations."""

__version__ = "0.1.0"
