"""Domain types, channel models and scalar metrics for multigroup multicast beamforming."""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

# PSD tolerance used when validating covariance stacks: minimum eigenvalue
# must not fall below -EPS_PSD * max(1, largest eigenvalue).
EPS_PSD = 1e-8

# modulation table: ascending (linear min-SINR threshold, label); anything
# below the first threshold gets BASE_MODULATION
BASE_MODULATION = "BPSK"
DEFAULT_MODULATION_THRESHOLDS = ((1.0, "QPSK"),)


def _frozen_array(a, dtype):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclasses.dataclass(frozen=True)
class ChannelSet:
    """Complex gain matrix, antennas x users; column i is user i's channel h_i."""

    H: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.complex128)
        if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
            raise ValueError("channel matrix must be a nonempty 2-D array")
        if not np.isfinite(H).all():
            raise ValueError("channel entries must be finite")
        object.__setattr__(self, "H", _frozen_array(H, np.complex128))

    @property
    def nt(self) -> int:
        return self.H.shape[0]

    @property
    def nu(self) -> int:
        return self.H.shape[1]

    def h(self, i: int) -> np.ndarray:
        """Channel vector of user i, length nt."""
        return self.H[:, i]

    def outer(self, i: int) -> np.ndarray:
        """Rank-one channel matrix h_i h_i^H of user i (Hermitian PSD)."""
        hi = self.H[:, i]
        return np.outer(hi, hi.conj())


@dataclasses.dataclass(frozen=True)
class GroupPartition:
    """Partition of users 0..Nu-1 into disjoint, covering, nonempty groups."""

    groups: tuple

    def __post_init__(self):
        groups = tuple(tuple(int(u) for u in g) for g in self.groups)
        if len(groups) == 0 or any(len(g) == 0 for g in groups):
            raise ValueError("every group must be nonempty")
        flat = [u for g in groups for u in g]
        if len(set(flat)) != len(flat):
            raise ValueError("groups must be pairwise disjoint")
        if set(flat) != set(range(len(flat))):
            raise ValueError("groups must cover users 0..Nu-1 exactly")
        owner = np.empty(len(flat), dtype=np.intp)
        for k, g in enumerate(groups):
            for u in g:
                owner[u] = k
        owner.setflags(write=False)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "_owner", owner)

    @property
    def ng(self) -> int:
        return len(self.groups)

    @property
    def nu(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def owner(self) -> np.ndarray:
        """Group index of each user, shape (nu,)."""
        return self._owner

    def group_of(self, i: int) -> int:
        return int(self._owner[i])

    def users_of(self, k: int) -> tuple:
        return self.groups[k]


@dataclasses.dataclass(frozen=True)
class ProblemInstance:
    """Full solver input: channels, grouping, SINR weights, PACs and noise powers.

    targets are the per-user weights gamma_i in linear SINR units, pac the
    per-antenna limits P_n in Watts, noise the receiver powers sigma_i^2.
    """

    channels: ChannelSet
    partition: GroupPartition
    targets: np.ndarray
    pac: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        g = _frozen_array(self.targets, np.float64)
        p = _frozen_array(self.pac, np.float64)
        s = _frozen_array(self.noise, np.float64)
        nu = self.channels.nu
        nt = self.channels.nt
        if self.partition.nu != nu:
            raise ValueError("partition covers %d users, channels have %d" % (self.partition.nu, nu))
        if g.shape != (nu,) or s.shape != (nu,):
            raise ValueError("targets and noise must have one entry per user")
        if p.shape != (nt,):
            raise ValueError("pac must have one entry per antenna")
        if not (np.all(g > 0) and np.all(p > 0) and np.all(s > 0)):
            raise ValueError("targets, pac and noise must be strictly positive")
        object.__setattr__(self, "targets", g)
        object.__setattr__(self, "pac", p)
        object.__setattr__(self, "noise", s)

    @property
    def nt(self) -> int:
        return self.channels.nt

    @property
    def nu(self) -> int:
        return self.channels.nu

    @property
    def ng(self) -> int:
        return self.partition.ng

    @property
    def owner(self) -> np.ndarray:
        return self.partition.owner

    @property
    def total_power(self) -> float:
        return float(self.pac.sum())

    def with_pac(self, pac) -> "ProblemInstance":
        """Same instance with a different per-antenna budget vector."""
        return ProblemInstance(self.channels, self.partition, self.targets, pac, self.noise)

    def with_targets(self, targets) -> "ProblemInstance":
        return ProblemInstance(self.channels, self.partition, targets, self.pac, self.noise)


def make_instance(channels: ChannelSet, groups, targets=None, pac=None, noise=None) -> ProblemInstance:
    """Assemble a ProblemInstance with unit defaults for the unspecified vectors."""
    part = groups if isinstance(groups, GroupPartition) else GroupPartition(tuple(groups))
    if targets is None:
        targets = np.ones(channels.nu)
    if pac is None:
        pac = np.ones(channels.nt)
    if noise is None:
        noise = np.ones(channels.nu)
    return ProblemInstance(channels, part, targets, pac, noise)


@dataclasses.dataclass(frozen=True)
class PrecoderSet:
    """G complex beamforming vectors as columns of an antennas x groups matrix."""

    W: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.complex128)
        if W.ndim != 2 or W.shape[0] < 1 or W.shape[1] < 1:
            raise ValueError("precoder matrix must be a nonempty 2-D array")
        if not np.isfinite(W).all():
            raise ValueError("precoder entries must be finite")
        object.__setattr__(self, "W", _frozen_array(W, np.complex128))

    @property
    def nt(self) -> int:
        return self.W.shape[0]

    @property
    def ng(self) -> int:
        return self.W.shape[1]

    def w(self, k: int) -> np.ndarray:
        return self.W[:, k]

    @property
    def total_power(self) -> float:
        return float(np.sum(np.abs(self.W) ** 2))

    def scaled(self, factors) -> "PrecoderSet":
        """Per-group complex scale factors applied to the columns."""
        f = np.asarray(factors)
        if f.shape != (self.ng,):
            raise ValueError("need one factor per group")
        return PrecoderSet(self.W * f[None, :])


@dataclasses.dataclass(frozen=True)
class CovarianceSet:
    """Stack of G Hermitian PSD matrices, shape (G, n, n)."""

    X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.complex128)
        if X.ndim != 3 or X.shape[1] != X.shape[2] or X.shape[0] < 1:
            raise ValueError("covariances must be a (G, n, n) stack")
        if not np.isfinite(X).all():
            raise ValueError("covariance entries must be finite")
        herm_gap = np.abs(X - X.conj().transpose(0, 2, 1)).max()
        scale = max(1.0, np.abs(X).max())
        if herm_gap > 1e-6 * scale:
            raise ValueError("covariances must be Hermitian")
        X = 0.5 * (X + X.conj().transpose(0, 2, 1))
        for k in range(X.shape[0]):
            ev = np.linalg.eigvalsh(X[k])
            if ev[0] < -EPS_PSD * max(1.0, ev[-1]):
                raise ValueError("covariance %d is not PSD within tolerance" % k)
        object.__setattr__(self, "X", _frozen_array(X, np.complex128))

    @property
    def ng(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def x(self, k: int) -> np.ndarray:
        return self.X[k]

    def rank_ratios(self) -> np.ndarray:
        """Second-to-first eigenvalue ratio per group; 0 for the zero matrix."""
        out = np.zeros(self.ng)
        for k in range(self.ng):
            ev = np.linalg.eigvalsh(self.X[k])
            lam1 = ev[-1]
            lam2 = ev[-2] if self.n > 1 else 0.0
            out[k] = max(lam2, 0.0) / lam1 if lam1 > 0 else 0.0
        return out


# ---------------------------------------------------------------------------
# scalar metrics


def received_powers(w: PrecoderSet, channels: ChannelSet) -> np.ndarray:
    """|w_k^H h_i|^2 for every group k and user i, shape (G, Nu)."""
    return np.abs(w.W.conj().T @ channels.H) ** 2


def sinr_all(w: PrecoderSet, inst: ProblemInstance) -> np.ndarray:
    """SINR of every user under precoders w, shape (Nu,)."""
    if w.nt != inst.nt or w.ng != inst.ng:
        raise ValueError("precoder dimensions do not match the instance")
    rx = received_powers(w, inst.channels)
    idx = np.arange(inst.nu)
    sig = rx[inst.owner, idx]
    interference = rx.sum(axis=0) - sig
    return sig / (interference + inst.noise)


def sinr(w: PrecoderSet, inst: ProblemInstance, i: int) -> float:
    """SINR of user i: own-group received power over other-group power plus noise."""
    if not 0 <= i < inst.nu:
        raise ValueError("user index out of range")
    return float(sinr_all(w, inst)[i])


def per_antenna_power(w: PrecoderSet) -> np.ndarray:
    """Radiated power of each antenna, [sum_k w_k w_k^H]_nn = sum_k |w_k[n]|^2."""
    return np.sum(np.abs(w.W) ** 2, axis=1)


def min_rate(w: PrecoderSet, inst: ProblemInstance) -> float:
    """Worst-user achievable rate log2(1 + min_i SINR_i) in bps/Hz."""
    return float(np.log2(1.0 + np.min(sinr_all(w, inst))))


def power_utilization(w: PrecoderSet, inst: ProblemInstance) -> float:
    """Total radiated power over the total available power."""
    return float(per_antenna_power(w).sum() / inst.pac.sum())


def assign_modulation(w: PrecoderSet, inst: ProblemInstance, thresholds=None):
    """Per-group modulation labels decided by the minimum group SINR.

    thresholds is an ascending sequence of (linear SINR, label); a group whose
    minimum SINR clears no threshold gets BASE_MODULATION.
    """
    if thresholds is None:
        thresholds = DEFAULT_MODULATION_THRESHOLDS
    thr = [float(t) for t, _ in thresholds]
    if thr != sorted(thr):
        raise ValueError("thresholds must be sorted ascending")
    s = sinr_all(w, inst)
    labels = []
    for g in inst.partition.groups:
        group_min = float(np.min(s[list(g)]))
        label = BASE_MODULATION
        for t, name in thresholds:
            if group_min >= float(t):
                label = name
        labels.append(label)
    return labels


# ---------------------------------------------------------------------------
# channel generators


def gen_rayleigh(nt: int, nu: int, seed) -> ChannelSet:
    """i.i.d. circularly-symmetric complex Gaussian channels, unit variance.

    seed may be an int or a numpy Generator; fixed seeds reproduce exactly.
    """
    if nt < 1 or nu < 1:
        raise ValueError("nt and nu must be at least 1")
    rng = np.random.default_rng(seed)
    H = (rng.standard_normal((nt, nu)) + 1j * rng.standard_normal((nt, nu))) / np.sqrt(2.0)
    return ChannelSet(H)


def gen_ula(nt: int, angles: Sequence[float]) -> ChannelSet:
    """Half-wavelength uniform linear array steering channels.

    h_i[n] = exp(j*pi*n*sin(theta_i)) for n = 0..nt-1, theta in radians.
    """
    if nt < 1:
        raise ValueError("nt must be at least 1")
    theta = np.asarray(angles, dtype=np.float64)
    n = np.arange(nt)[:, None]
    return ChannelSet(np.exp(1j * np.pi * n * np.sin(theta)[None, :]))


def _from_polar(table_deg):
    mag = np.array([[m for m, _ in row] for row in table_deg])
    ang = np.deg2rad([[a for _, a in row] for row in table_deg])
    return mag * np.exp(1j * ang)


# measured example channels, rows are antennas and columns users;
# entries are (linear magnitude, phase in degrees)
_DAS_5X4 = (
    ((2.94, 41.0), (11.0, -25.0), (4.4, 50.0), (6.6, -4.0)),
    ((13.2, -150.0), (4.8, 14.0), (15.2, -7.0), (4.8, -37.0)),
    ((12.0, -155.0), (1.5, 163.0), (13.5, -105.0), (3.9, -46.0)),
    ((0.02, -53.0), (0.03, -66.0), (0.03, 120.0), (0.03, -129.0)),
    ((5.66, 137.0), (9.2, 49.0), (13.0, -175.0), (2.45, 126.0)),
)
_PARADIGM_2X4 = (
    ((0.2, 106.0), (90.0, -69.0), (0.5, -99.0), (0.5, 61.0)),
    ((0.8, 111.0), (120.0, -112.0), (1.0, 127.0), (1.5, 49.0)),
)

_EXAMPLE_CHANNELS = {"das_5x4": _DAS_5X4, "paradigm_2x4": _PARADIGM_2X4}


def example_channel(name: str) -> ChannelSet:
    """Hard-coded measured channel matrices used by the bundled experiments.

    das_5x4 is a 5-antenna, 4-user distributed system with one degraded
    antenna; paradigm_2x4 is a 2-antenna, 4-user set with one strong user.
    """
    try:
        table = _EXAMPLE_CHANNELS[name]
    except KeyError:
        raise ValueError("unknown example channel %r (have %s)" % (name, sorted(_EXAMPLE_CHANNELS)))
    return ChannelSet(_from_polar(table))


# ---------------------------------------------------------------------------
# CSV serialization (row = antenna, column pairs = Re,Im per user)


def channel_to_csv(ch: ChannelSet) -> str:
    header = ",".join("re_u%d,im_u%d" % (i, i) for i in range(ch.nu))
    lines = [header]
    for n in range(ch.nt):
        row = []
        for i in range(ch.nu):
            v = ch.H[n, i]
            row.append("%.17g,%.17g" % (v.real, v.imag))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def channel_from_csv(text: str) -> ChannelSet:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise ValueError("channel CSV needs a header and at least one antenna row")
    rows = []
    for ln in lines[1:]:
        vals = [float(v) for v in ln.split(",")]
        if len(vals) % 2 != 0:
            raise ValueError("channel CSV rows must hold Re,Im pairs")
        rows.append([complex(vals[2 * i], vals[2 * i + 1]) for i in range(len(vals) // 2)])
    return ChannelSet(np.array(rows))
