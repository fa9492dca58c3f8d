"""Meta internal learning on a small numpy autodiff engine."""
