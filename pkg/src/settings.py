def _o(data, choices=None, help=None):
    """Option as extend builtin class (e.g., int, float, str)"""
    class Inner(type(data)):
        def __new__(cls, value, choices=None, help=None):
            self = super().__new__(cls, value)
            self.choices = choices
            self.help = None if help is None else f'{help}. Default: {value!r}.'
            return self
    return Inner(data, choices, help)


class _ob:
    """Option as bool"""
    def __init__(self, data, help=None):
        self._data = data
        self.help = None if help is None else f'{help}. Current: {data!r}.'
        self.is_bool = True

    @property
    def data(self):
        return self._data

    def __bool__(self):
        return bool(self._data)

    def __eq__(self, other):
        if isinstance(other, _ob) and self._data == other._data:
            return True
        if isinstance(other, bool) and self._data == other:
            return True
        return False

    def __repr__(self):
        return repr(self._data)

    def __str__(self):
        return str(self._data)


class __ol:
    def __init__(self, data, dtype=None, nargs='*', choices=None, help=None):
        self._data = data
        self.dtype = dtype or (type(data[0]) if data else None)
        self.nargs = nargs
        self.choices = choices
        self.help = None if help is None else f'{help}. Default: {data!r}.'

    @property
    def data(self):
        return list(self._data)

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __getitem__(self, index):
        return self._data[index]

    def __repr__(self):
        return repr(self._data)

    def __str__(self):
        return str(self._data)


def _ol(*data, **kwargs):
    """Option as list / tuple"""
    return __ol(data, **kwargs)


# For lie-core
lie_tol = _o(1e-9, help="Absolute tolerance on matrix entries (det, orthogonality, reconstruction)")
lie_residual_tol = _o(1e-10, help="Residual tolerance for eigenspace and grading checks")
lie_cond_limit = _o(1e12, help="Reject Iwasawa input whose condition number exceeds this")

# For carnot
carnot_dedup_eps = _o(1e-6, help="Coordinate resolution used to deduplicate lattice elements")
carnot_fd_step = _o(1e-5, help="Finite-difference step for the dilation pushforward check")
carnot_margin_radius = _o(3, help="Word radius of the window on which rescale_lattice reports the margin")
carnot_margin_candidates = _o(3, help="Number of smallest-margin differences that also get an optimized upper bound")

# For path optimization (carnot.distance_d0, symspace.distance_GK)
path_rel_tol = _o(1e-4, help="Stop refining the polyline once the relative improvement drops below this")
path_max_levels = _o(7, help="Maximum number of dyadic refinement levels of the polyline")
path_max_iter = _o(300, help="L-BFGS-B iterations per refinement level")
path_simpson_panels = _o(2, help="Simpson panels per polyline segment")

# For models and nets
model = _o('h3', choices=['sl2r', 'sl3r', 'h2', 'h3'], help="Registered model")
lattice_rescale = _o(-1.0, help="Dilation factor applied to the lattice; non-positive selects the model default")
a_box = _ol(-2, 2, dtype=int, help="Lower and upper integer bound of every flat coordinate of the window")
ball_radius = _o(3, help="Word radius of the lattice ball in every leaf")
action_generators = _ol(dtype=str,
    help="Acting lattice elements as words over the generators (e.g. 'a', 'aB'); empty for the lattice generators")
wobble_slope = _o(2.2, help="Slope of the wobbling envelope sup <= slope * ln(d0) + offset")
wobble_offset = _o(1.0, help="Offset of the wobbling envelope")
freeness_word_length = _o(4, help="Maximum word length of acting elements in freeness checks")
udbg_radii = _ol(1.0, 2.0, 3.0, 4.0, help="Ambient radii of the ball-count profile")
density_grid = _o(8, help="Density reports use density_grid ** dim(N) Halton probes on one leaf")
density_leaf = _o(0.5, help="Offset of the probe leaf above the lowest trusted leaf")

# For coarse / quotient experiments
folner_space = _o('z2', choices=['z2', 'f2'], help="Cayley window used by the folner command")
folner_n = _o(50, help="Largest ball radius of the folner profile")
folner_r = _o(1.0, help="Boundary thickness r")
match_size = _o(100, help="Side of the square grid used by the match command")
match_offset = _ol(0.3, 0.4, help="Translation of the second grid")
match_radius = _o(1.0, help="Maximum displacement R of the matching")
quotient_compare = _o('line', choices=['none', 'line', 'sublattice'],
    help="Comparison made by the quotient command: integer line or the (2Z)^k sublattice action")
quotient_require_connected = _ob(True, help="Stop with DisconnectedQuotientError when the class graph of the window is disconnected")

growth_radii = _ol(4, 8, 12, 16, dtype=int, help="Word radii of the growth command")
iwasawa_samples = _o(20, help="Random group elements decomposed by group-info")

# For experiments
seed = _o(0, help="Seed of every random choice of a run")
out_dir = _o('out', help="Directory receiving CSV/JSON artifacts")
