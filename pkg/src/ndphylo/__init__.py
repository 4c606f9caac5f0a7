"""Image phylogeny trees and forests from near-duplicate images."""

__version__ = "0.1.0"
