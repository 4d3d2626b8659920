from logcontrast.cli import entrypoint

entrypoint()
