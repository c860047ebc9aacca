"""GDP nowcasting with neural sequence models, factor-model benchmarks and additive attribution."""

__version__ = "0.1.0"
