"""Simulated received frames and their on-disk format.

File layout: one UTF-8 JSON header line terminated by ``\\n``, then the
samples of every (power, frame) as little-endian float64 ``re, im`` pairs,
then the reference bits of every frame packed MSB first (``numpy.packbits``).
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .channel import LaunchConfig, LinkParams, receiver_frontend, transmit_link
from .signal import PulseShape, SymbolFrame, random_frame

FORMAT = "paldbp-dataset/1"
SPLITS = {"train": 1, "test": 2}
CHUNK = 16


@dataclass
class Dataset:
    """Received frames ``rx[power, frame, sample]`` at ``rx_sps`` with references."""

    rx: np.ndarray
    symbols: np.ndarray
    bits: np.ndarray
    powers_dbm: list
    header: dict

    @property
    def n_frames(self) -> int:
        return self.symbols.shape[0]

    def at_power(self, power_dbm: float) -> np.ndarray:
        for i, p in enumerate(self.powers_dbm):
            if abs(p - power_dbm) < 1e-9:
                return self.rx[i]
        raise KeyError(f"launch power {power_dbm} dBm not in dataset {self.powers_dbm}")

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        """Frames ``[:n_first]`` and ``[n_first:]`` (e.g. train / validation)."""
        a = Dataset(self.rx[:, :n_first], self.symbols[:n_first], self.bits[:n_first],
                    self.powers_dbm, dict(self.header))
        b = Dataset(self.rx[:, n_first:], self.symbols[n_first:], self.bits[n_first:],
                    self.powers_dbm, dict(self.header))
        return a, b


def config_digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def dataset_config(link: LinkParams, powers_dbm, n_frames: int, *, seed: int = 0, split: str = "train",
                   n_symbols: int = 1024, symbol_rate: float = 32e9, roll_off: float = 0.1,
                   channel_sps: int = 8, rx_sps: int = 2, noise: bool = True) -> dict:
    """The configuration recorded in (and digested into) a dataset header."""
    return {"link": asdict(link), "powers_dbm": [float(p) for p in powers_dbm], "n_frames": n_frames,
            "seed": seed, "split": split, "n_symbols": n_symbols, "symbol_rate": symbol_rate,
            "roll_off": roll_off, "channel_sps": channel_sps, "rx_sps": rx_sps, "noise": noise}


def _noise_seed(seed: int, split_id: int, power_idx: int, chunk: int) -> int:
    ss = np.random.SeedSequence([seed, split_id, 0x5EED, power_idx, chunk])
    return int(ss.generate_state(1, np.uint64)[0])


def simulate(link: LinkParams, powers_dbm, n_frames: int, *, seed: int = 0, split: str = "train",
             n_symbols: int = 1024, symbol_rate: float = 32e9, roll_off: float = 0.1,
             channel_sps: int = 8, rx_sps: int = 2, noise: bool = True, threads: int = 1,
             provenance: dict | None = None) -> Dataset:
    """Transmit ``n_frames`` random 64-QAM frames at every launch power.

    Frames are processed in fixed chunks of 16 whose noise streams depend
    only on ``(seed, split, power index, chunk index)``, so the result does
    not depend on ``threads``.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {sorted(SPLITS)}")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    sid = SPLITS[split]
    frames = [random_frame(n_symbols, seed, sid, f) for f in range(n_frames)]
    symbols = np.stack([f.symbols for f in frames])
    bits = np.stack([f.bits for f in frames])
    pulse = PulseShape(roll_off, None, channel_sps)
    powers = [float(p) for p in powers_dbm]
    chunks = [(pi, c) for pi in range(len(powers)) for c in range(0, n_frames, CHUNK)]

    def run(job):
        pi, c = job
        fr = SymbolFrame(symbols[c:c + CHUNK], bits[c:c + CHUNK])
        sig = transmit_link(fr, link, LaunchConfig(powers[pi]), pulse,
                            _noise_seed(seed, sid, pi, c // CHUNK), symbol_rate=symbol_rate, noise=noise)
        rx, _ = receiver_frontend(sig, pulse, symbol_rate, rx_sps)
        return rx.samples

    n_samples = n_symbols * rx_sps
    rx = np.empty((len(powers), n_frames, n_samples), dtype=np.complex128)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, chunks))
    else:
        results = [run(j) for j in chunks]
    for (pi, c), r in zip(chunks, results):
        rx[pi, c:c + CHUNK] = r
    cfg = dataset_config(link, powers, n_frames, seed=seed, split=split, n_symbols=n_symbols,
                         symbol_rate=symbol_rate, roll_off=roll_off, channel_sps=channel_sps,
                         rx_sps=rx_sps, noise=noise)
    header = {"format": FORMAT, "config": cfg, "config_digest": config_digest(cfg),
              "frame_len": n_samples, "sample_rate": symbol_rate * rx_sps,
              "bits_per_frame": int(bits.shape[1])}
    header.update(provenance or {})
    return Dataset(rx, symbols, bits, powers, header)


def save(ds: Dataset, path) -> None:
    header = dict(ds.header)
    header["shape"] = list(ds.rx.shape)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        inter = np.empty(ds.rx.shape + (2,), dtype="<f8")
        inter[..., 0] = ds.rx.real
        inter[..., 1] = ds.rx.imag
        fh.write(inter.tobytes())
        fh.write(np.packbits(ds.bits.astype(np.uint8), axis=-1).tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return json.loads(fh.readline().decode("utf-8"))


def payload_size(header: dict) -> int:
    n_pow, n_fr, n = header["shape"]
    return n_pow * n_fr * n * 16 + n_fr * ((header["bits_per_frame"] + 7) // 8)


def load(path) -> Dataset:
    from .signal import qam64_map

    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        body = fh.read()
    if len(body) != payload_size(header):
        raise ValueError(f"{path}: payload has {len(body)} bytes, expected {payload_size(header)}")
    n_pow, n_fr, n = header["shape"]
    n_iq = n_pow * n_fr * n * 16
    inter = np.frombuffer(body[:n_iq], dtype="<f8").reshape(n_pow, n_fr, n, 2)
    rx = inter[..., 0] + 1j * inter[..., 1]
    nb = header["bits_per_frame"]
    bits = np.unpackbits(np.frombuffer(body[n_iq:], dtype=np.uint8).reshape(n_fr, -1), axis=-1)[:, :nb]
    symbols = qam64_map(bits).symbols
    return Dataset(rx, symbols, bits, header["config"]["powers_dbm"], header)
