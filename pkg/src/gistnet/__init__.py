"""GistNet: object classification from a high-resolution object crop plus a
low-resolution view of the surrounding scene, implemented on numpy."""

__version__ = "0.1.0"
