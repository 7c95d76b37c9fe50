"""Channel simulation: analog AWGN transmission of the latent and an
LDPC/BPSK digital link for comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import _kernels
from .core import ChannelConfig, QuantizerCodebook


def noise_std(signal_power: float | torch.Tensor, snr_db: float):
    """Standard deviation giving ``snr_db`` against ``signal_power``."""
    if snr_db == math.inf:
        return signal_power * 0.0
    return (signal_power / 10.0 ** (snr_db / 10.0)) ** 0.5


def ebn0_to_snr_db(ebn0_db: float, rate: float) -> float:
    """Per-dimension SNR of real BPSK for a given Eb/N0: ``snr = 2 R Eb/N0``."""
    return ebn0_db + 10.0 * math.log10(2.0 * rate)


class AwgnChannel:
    """Additive white Gaussian noise with gain, ``y = h * x + n``.

    Owns its random stream; derive one channel per worker with
    :meth:`spawn` instead of sharing.
    """

    def __init__(self, config: ChannelConfig | None = None, seed: int = 0):
        self.config = config or ChannelConfig()
        self.seed = int(seed)
        self.generator = torch.Generator().manual_seed(self.seed)
        self.rng = np.random.default_rng(self.seed)

    @property
    def snr_db(self) -> float:
        return self.config.snr_db

    @property
    def gain(self) -> float:
        return self.config.gain

    def spawn(self, worker: int, snr_db: float | None = None) -> "AwgnChannel":
        seq = np.random.SeedSequence([self.seed, int(worker)])
        cfg = self.config if snr_db is None else ChannelConfig(snr_db, self.gain, self.config.mode)
        return AwgnChannel(cfg, int(seq.generate_state(1)[0]))

    def with_snr(self, snr_db: float) -> "AwgnChannel":
        """Same seed, different SNR."""
        return AwgnChannel(ChannelConfig(snr_db, self.gain, self.config.mode), self.seed)

    def __repr__(self) -> str:
        return f"AwgnChannel(snr_db={self.snr_db}, gain={self.gain}, seed={self.seed})"


def transmit_analog(
    y_q: torch.Tensor,
    ch: AwgnChannel,
    snr_db: float | None = None,
) -> torch.Tensor:
    """Send a latent through the AWGN channel.

    The noise variance is set from the empirical mean square of each
    transmitted latent (per batch item for 4-D input). Gradients flow to
    ``y_q`` through the gain; the noise scale is treated as a constant.
    """
    if not torch.isfinite(y_q).all():
        raise ValueError("latent contains non-finite values")
    snr = ch.snr_db if snr_db is None else snr_db
    out = ch.gain * y_q
    if snr == math.inf:
        return out
    dims = tuple(range(1, y_q.dim())) if y_q.dim() == 4 else tuple(range(y_q.dim()))
    power = (y_q.detach() ** 2).mean(dim=dims, keepdim=True)
    sigma = noise_std(power, snr)
    noise = torch.randn(y_q.shape, generator=ch.generator, dtype=y_q.dtype)
    return out + sigma * noise.to(y_q.device)


# ---------------------------------------------------------------------------
# LDPC
# ---------------------------------------------------------------------------


def regular_parity_matrix(n: int, col_weight: int, row_weight: int, rng: np.random.Generator) -> np.ndarray:
    """Random regular parity-check matrix from a socket permutation.

    Variable sockets are dealt to checks in random order; conflicting sockets
    (repeated variable in one check, or a 4-cycle) are swapped with random
    partners until none remain or the repair budget runs out.
    """
    if (n * col_weight) % row_weight:
        raise ValueError("n * col_weight must be divisible by row_weight")
    m = n * col_weight // row_weight
    sockets = rng.permutation(np.repeat(np.arange(n), col_weight))

    def build(s: np.ndarray) -> np.ndarray:
        H = np.zeros((m, n), dtype=np.uint8)
        np.add.at(H, (np.repeat(np.arange(m), row_weight), s), 1)
        return H

    for _ in range(20 * n):
        H = build(sockets)
        dup_rows = np.flatnonzero((H > 1).any(axis=1))
        if len(dup_rows):
            r = int(dup_rows[0])
        else:
            Hf = H.astype(np.float32)
            overlap = Hf @ Hf.T
            np.fill_diagonal(overlap, 0)
            bad = np.argwhere(overlap > 1)
            if len(bad) == 0:
                return H
            r = int(bad[rng.integers(len(bad))][0])
        a = r * row_weight + int(rng.integers(row_weight))
        b = int(rng.integers(len(sockets)))
        sockets[a], sockets[b] = sockets[b], sockets[a]
    H = build(sockets)
    return (H & 1).astype(np.uint8)


def gf2_row_reduce(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced row echelon form over GF(2). Returns (R, pivot columns)."""
    R = (np.asarray(H) & 1).astype(np.uint8).copy()
    m, n = R.shape
    pivots = []
    row = 0
    for col in range(n):
        if row >= m:
            break
        hits = np.flatnonzero(R[row:, col]) + row
        if len(hits) == 0:
            continue
        p = hits[0]
        if p != row:
            R[[row, p]] = R[[p, row]]
        others = np.flatnonzero(R[:, col])
        others = others[others != row]
        R[others] ^= R[row]
        pivots.append(col)
        row += 1
    return R[:row], np.asarray(pivots, dtype=np.int64)


@dataclass
class LdpcCode:
    """Binary LDPC code with systematic encoding and sum-product decoding.

    Message bits occupy the non-pivot columns of the row-reduced parity
    check matrix, so ``k = n - rank(H)``; a rank-deficient H simply yields a
    slightly higher rate.
    """

    H: np.ndarray
    max_iter: int = 50
    info_cols: np.ndarray = field(init=False, repr=False)
    parity_cols: np.ndarray = field(init=False, repr=False)
    _P: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.H = (np.asarray(self.H) & 1).astype(np.uint8)
        R, pivots = gf2_row_reduce(self.H)
        n = self.H.shape[1]
        mask = np.ones(n, dtype=bool)
        mask[pivots] = False
        self.parity_cols = pivots
        self.info_cols = np.flatnonzero(mask)
        self._P = R[:, self.info_cols]  # parity bits = P @ message (mod 2)

        rows, cols = np.nonzero(self.H)  # row-major: ordered by check
        self._edge_var = cols.astype(np.int64)
        self._chk_ptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=self.H.shape[0]))]).astype(np.int64)
        order = np.argsort(cols, kind="stable")
        self._var_edges = order.astype(np.int64)
        self._var_ptr = np.concatenate([[0], np.cumsum(np.bincount(cols, minlength=n))]).astype(np.int64)
        if np.any(np.diff(self._var_ptr) == 0) or np.any(np.diff(self._chk_ptr) == 0):
            raise ValueError("parity-check matrix has an empty row or column")

    @classmethod
    def regular(
        cls,
        n: int = 1024,
        col_weight: int = 3,
        row_weight: int = 6,
        seed: int = 0,
        max_iter: int = 50,
    ) -> "LdpcCode":
        rng = np.random.default_rng(seed)
        return cls(regular_parity_matrix(n, col_weight, row_weight, rng), max_iter=max_iter)

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def k(self) -> int:
        return len(self.info_cols)

    @property
    def rate(self) -> float:
        return self.k / self.n

    def encode(self, bits: np.ndarray) -> np.ndarray:
        u = np.asarray(bits).astype(np.uint8)
        if u.shape[-1] != self.k:
            raise ValueError(f"message length {u.shape[-1]} != code dimension {self.k}")
        c = np.zeros(u.shape[:-1] + (self.n,), dtype=np.uint8)
        c[..., self.info_cols] = u
        c[..., self.parity_cols] = (u.astype(np.int64) @ self._P.T.astype(np.int64)) & 1
        return c

    def syndrome(self, codeword: np.ndarray) -> np.ndarray:
        return (np.asarray(codeword).astype(np.int64) @ self.H.T.astype(np.int64)) & 1

    def decode(self, llrs: np.ndarray) -> tuple[np.ndarray, bool]:
        """BP decode one block of LLRs (positive favours bit 0).

        Returns the message bits and a failure flag. Failure means parity was
        never satisfied, or some bit ended with no information at all.
        """
        llrs = np.asarray(llrs, dtype=np.float64)
        if llrs.shape != (self.n,):
            raise ValueError(f"expected {self.n} LLRs, got {llrs.shape}")
        post, _, ok = _kernels.bp_decode(
            llrs, self._chk_ptr, self._edge_var, self._var_ptr, self._var_edges, self.max_iter
        )
        hard = (post < 0).astype(np.uint8)
        failed = (not ok) or bool(np.min(np.abs(post)) < 1e-6)
        return hard[self.info_cols], failed


def ldpc_encode(bits: np.ndarray, code: LdpcCode) -> np.ndarray:
    return code.encode(bits)


def ldpc_decode(llrs: np.ndarray, code: LdpcCode) -> tuple[np.ndarray, bool]:
    return code.decode(llrs)


@dataclass
class LinkStats:
    blocks: int = 0
    failed_blocks: int = 0
    bit_errors: int = 0
    bits: int = 0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0


def send_bits(
    bits: np.ndarray,
    code: LdpcCode,
    ch: AwgnChannel,
    snr_db: float | None = None,
) -> tuple[np.ndarray, LinkStats]:
    """Bits -> LDPC blocks -> BPSK -> AWGN -> BP -> bits.

    The tail block is zero padded. ``snr_db`` is the per-symbol SNR with unit
    BPSK energy, so ``sigma^2 = 1 / 10^(snr/10)``.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    snr = ch.snr_db if snr_db is None else snr_db
    k = code.k
    n_blocks = max(1, -(-len(bits) // k))
    msg = np.zeros(n_blocks * k, dtype=np.uint8)
    msg[: len(bits)] = bits
    msg = msg.reshape(n_blocks, k)
    cw = code.encode(msg)
    tx = 1.0 - 2.0 * cw
    h = ch.gain
    if snr == math.inf:
        rx = h * tx
        llr = np.sign(rx) * _kernels.LLR_CLIP
    else:
        sigma2 = 10.0 ** (-snr / 10.0)
        rx = h * tx + ch.rng.normal(0.0, math.sqrt(sigma2), size=tx.shape)
        llr = 2.0 * h * rx / sigma2
    out = np.empty_like(msg)
    stats = LinkStats(blocks=n_blocks)
    for b in range(n_blocks):
        out[b], failed = code.decode(llr[b])
        stats.failed_blocks += int(failed)
    decoded = out.ravel()[: len(bits)]
    stats.bits = len(bits)
    stats.bit_errors = int(np.count_nonzero(decoded != bits))
    return decoded, stats


def indices_to_bits(indices: np.ndarray, width: int) -> np.ndarray:
    """MSB-first fixed-width binary expansion."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def bits_to_indices(bits: np.ndarray, width: int) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64).reshape(-1, width)
    weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
    return b @ weights


def transmit_digital(
    indices: np.ndarray | torch.Tensor,
    code: LdpcCode,
    ch: AwgnChannel,
    codebook: QuantizerCodebook,
    snr_db: float | None = None,
    stats: LinkStats | None = None,
) -> torch.Tensor:
    """Carry quantizer indices over the coded BPSK link and map back to centers.

    Returns a float tensor shaped like ``indices``. Decoded indices are
    always valid because the code width is exactly log2 of the codebook size.
    """
    if not codebook.is_power_of_two:
        raise ValueError("digital transport needs a power-of-two codebook")
    idx = indices.detach().cpu().numpy() if isinstance(indices, torch.Tensor) else np.asarray(indices)
    shape = idx.shape
    width = codebook.bits_per_index
    bits = indices_to_bits(idx, width)
    rx_bits, link = send_bits(bits, code, ch, snr_db)
    if stats is not None:
        for name in ("blocks", "failed_blocks", "bit_errors", "bits"):
            setattr(stats, name, getattr(stats, name) + getattr(link, name))
    rx_idx = bits_to_indices(rx_bits, width).reshape(shape)
    values = codebook.array[rx_idx]
    return torch.from_numpy(values).float()
