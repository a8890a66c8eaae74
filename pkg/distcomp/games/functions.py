from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union
import json
import logging

import numpy as np
from scipy.interpolate import PchipInterpolator

from ..core.validation import InvalidInput
from ..models.schemas import BivariateSpec, FunctionSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScalarFunction:
    """A vectorized scalar function with a readable description."""

    fn: Callable[[np.ndarray], np.ndarray]
    description: str

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class BivariateFunction:
    """kappa(x, q), broadcasting over both arguments."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    description: str

    def __call__(self, x, q):
        return self.fn(np.asarray(x, dtype=float), np.asarray(q, dtype=float))


class FunctionCatalog:
    """Builds functions from catalog specs, checking them against data/function_catalog.json."""

    def __init__(self):
        self.catalog = self._load_catalog()

    def _load_catalog(self) -> Dict[str, Any]:
        """Load the named-function catalog from JSON file."""
        try:
            catalog_path = Path(__file__).parent / "data" / "function_catalog.json"
            with open(catalog_path) as f:
                return json.load(f)
        except Exception as e:
            logger.error(f"Error loading function catalog: {str(e)}")
            raise

    def _params(self, spec: FunctionSpec) -> Dict[str, Any]:
        entry = self.catalog["forms"].get(spec.form.value)
        if entry is None:
            raise InvalidInput(f"unknown function form '{spec.form.value}'")
        params = dict(entry["defaults"])
        for name in entry["params"]:
            value = getattr(spec, name)
            if value is not None:
                params[name] = value
        missing = [name for name in entry["params"] if name not in params]
        if missing:
            raise InvalidInput(f"function form '{spec.form.value}' requires {missing}")
        supplied = {k for k, v in spec.model_dump(exclude={"form"}).items() if v is not None}
        unexpected = supplied - set(entry["params"])
        if unexpected:
            raise InvalidInput(f"function form '{spec.form.value}' does not take {sorted(unexpected)}")
        return params

    def build(self, spec: Union[FunctionSpec, Dict[str, Any]]) -> ScalarFunction:
        if isinstance(spec, dict):
            spec = FunctionSpec.model_validate(spec)
        params = self._params(spec)
        form = spec.form.value

        if form == "power":
            a, p = float(params["a"]), float(params["p"])
            return ScalarFunction(lambda x: a * np.power(np.clip(x, 0.0, None), p), f"{a:g}*x^{p:g}")
        if form == "affine":
            a, b = float(params["a"]), float(params["b"])
            return ScalarFunction(lambda x: a + b * x, f"{a:g}+{b:g}*x")
        if form == "exp_decay":
            a, r = float(params["a"]), float(params["r"])
            return ScalarFunction(lambda x: a * np.exp(-r * x), f"{a:g}*exp(-{r:g}*x)")
        return self._tabulated(params["knots"], params["values"])

    def _tabulated(self, knots, values) -> ScalarFunction:
        xs = np.asarray(knots, dtype=float)
        ys = np.asarray(values, dtype=float)
        if xs.size < 2 or xs.size != ys.size:
            raise InvalidInput("tabulated function needs matching knots and values, at least 2 of each")
        if np.any(np.diff(xs) <= 0.0):
            raise InvalidInput("tabulated knots must be strictly increasing")
        interp = PchipInterpolator(xs, ys, extrapolate=False)
        lo, hi = xs[0], xs[-1]
        return ScalarFunction(lambda x: interp(np.clip(x, lo, hi)), f"pchip[{xs.size} knots]")

    def build_bivariate(self, spec: Union[BivariateSpec, Dict[str, Any]]) -> BivariateFunction:
        if isinstance(spec, dict):
            spec = BivariateSpec.model_validate(spec)
        form = spec.form.value
        if form not in self.catalog["bivariate"]:
            raise InvalidInput(f"unknown bivariate form '{form}'")

        g = self.build(spec.g)
        if form == "sum":
            f = self.build(spec.f)
            return BivariateFunction(lambda x, q: f(x) + g(q), f"{f.description} + {g.description}")
        if form == "product":
            f = self.build(spec.f)
            return BivariateFunction(lambda x, q: f(x) * g(q), f"({f.description})*({g.description})")
        h = self.build(spec.h)
        base = float(spec.base)
        return BivariateFunction(
            lambda t, q: base + h(t) * g(q),
            f"{base:g} + ({h.description})*({g.description})",
        )


_catalog: Optional[FunctionCatalog] = None


def get_catalog() -> FunctionCatalog:
    global _catalog
    if _catalog is None:
        _catalog = FunctionCatalog()
    return _catalog


def build_function(spec: Union[FunctionSpec, Dict[str, Any]]) -> ScalarFunction:
    return get_catalog().build(spec)


def build_bivariate(spec: Union[BivariateSpec, Dict[str, Any]]) -> BivariateFunction:
    return get_catalog().build_bivariate(spec)
