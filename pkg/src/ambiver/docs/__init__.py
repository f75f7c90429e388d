"""Additional narrative documentation for AmbiVer's pdoc site."""
