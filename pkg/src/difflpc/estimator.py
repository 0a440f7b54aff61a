"""scikit-learn style front ends for feature extraction and vocoder training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import model as mdl
from .features import AnalysisConfig, analyze, analyze_aligned, ground_truth_batch
from .losses import VARIANTS, LossConfig
from .lp_math import log_spectral_distance
from .signal_ops import pre_emphasis as apply_pre_emphasis
from .training import TrainConfig, fit, sequences_from_corpus
from .validation import check_cepstra, check_choice, check_signals


class BandCepstrum(TransformerMixin, BaseEstimator):
    """Signals to 18-band cepstra, one row per 10 ms frame.

    Parameters
    ----------
    pre_emphasis : float
        First-order emphasis coefficient applied before analysis.
    aligned : bool
        If True, frame j describes samples [160 j, 160 (j + 1)), one frame per
        full block; otherwise frames follow the plain sliding-window count.
    standardize : bool
        Subtract the per-band mean and divide by the standard deviation seen in ``fit``.
    """

    def __init__(self, pre_emphasis: float = 0.85, aligned: bool = True, standardize: bool = False):
        self.pre_emphasis = pre_emphasis
        self.aligned = aligned
        self.standardize = standardize

    def _analysis(self):
        return AnalysisConfig(pre_emphasis=self.pre_emphasis)

    def transform_each(self, X) -> list[np.ndarray]:
        """Cepstra of every signal, kept separate."""
        cfg = self._analysis()
        out = []
        for x in check_signals(X):
            emphasized, _ = apply_pre_emphasis(x, cfg.pre_emphasis)
            frames = analyze_aligned(emphasized, cfg) if self.aligned else analyze(emphasized, cfg)
            out.append(frames.cepstrum)
        return out

    def fit(self, X, y=None):
        cep = np.concatenate(self.transform_each(X))
        self.mean_ = cep.mean(axis=0)
        self.scale_ = np.maximum(cep.std(axis=0), 1e-3)
        self.n_frames_seen_ = cep.shape[0]
        return self

    def transform(self, X) -> np.ndarray:
        """Frames of all signals stacked in order, shape (total_frames, 18)."""
        check_is_fitted(self, "mean_")
        cep = np.concatenate(self.transform_each(X))
        return (cep - self.mean_) / self.scale_ if self.standardize else cep

    def reference_lpc(self, cepstra):
        """Ground-truth (lpc, rc) for each frame of un-standardized cepstra."""
        return ground_truth_batch(check_cepstra(cepstra), self._analysis())


class EndToEndLPCNet(BaseEstimator):
    """Vocoder whose LP filter is predicted by the frame-rate network and trained end to end.

    ``fit`` takes raw 16 kHz signals. ``transform`` maps cepstra to predicted
    LP coefficients, ``predict`` synthesizes audio from cepstra and ``score``
    returns minus the mean log-spectral distance (dB) to the reference
    filters over active frames.
    """

    def __init__(self, variant: str = "L1_plus_LAR", epochs: int = 20, batch_size: int = 32,
                 learning_rate: float = 1e-3, seed: int = 0, gamma: float = 1.0, lar_weight: float = 1.0,
                 freeze_final_epoch: bool = False, noise_prob: float = 0.3, micro_batch: int = 8,
                 cond_size: int = 128, embed_size: int = 64, gru_a: int = 192, gru_b: int = 32,
                 pre_emphasis: float = 0.85, temperature: float = 1.0):
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.gamma = gamma
        self.lar_weight = lar_weight
        self.freeze_final_epoch = freeze_final_epoch
        self.noise_prob = noise_prob
        self.micro_batch = micro_batch
        self.cond_size = cond_size
        self.embed_size = embed_size
        self.gru_a = gru_a
        self.gru_b = gru_b
        self.pre_emphasis = pre_emphasis
        self.temperature = temperature

    # configuration -----------------------------------------------------------

    def train_config(self) -> TrainConfig:
        check_choice(self.variant, VARIANTS, "variant")
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, learning_rate=self.learning_rate,
                           seed=self.seed, freeze_final_epoch=self.freeze_final_epoch,
                           noise_prob=self.noise_prob, micro_batch=self.micro_batch,
                           loss=LossConfig(self.variant, self.gamma, self.lar_weight))

    def model_config(self) -> mdl.ModelConfig:
        return mdl.ModelConfig(cond_size=self.cond_size, embed_size=self.embed_size, gru_a=self.gru_a,
                               gru_b=self.gru_b)

    def _analysis(self):
        return AnalysisConfig(pre_emphasis=self.pre_emphasis)

    # fitting -----------------------------------------------------------------

    def fit(self, X, y=None, log_path=None, callback=None):
        """Train on a list of raw signals (any length; short ones are skipped)."""
        cfg = self.train_config()
        data = sequences_from_corpus(check_signals(X), cfg, self._analysis())
        if len(data) == 0:
            raise ValueError("no signal is long enough for one training sequence")
        result = fit(data, cfg, self.model_config(), log_path=log_path, callback=callback)
        self.params_ = result.params
        self.history_ = result.history
        self.freeze_check_ = result.freeze_check
        self.n_sequences_ = len(data)
        return self

    # inference ---------------------------------------------------------------

    def transform(self, X) -> np.ndarray:
        """Predicted LP coefficients, shape (n_frames, 16)."""
        check_is_fitted(self, "params_")
        return mdl.frame_forward_numpy(self.params_, check_cepstra(X))[2]

    def reflection_coefficients(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return mdl.frame_forward_numpy(self.params_, check_cepstra(X))[1]

    def predict(self, X, seed: int | None = None) -> np.ndarray:
        """Synthesized, de-emphasized audio for cepstra X (160 samples per frame)."""
        check_is_fitted(self, "params_")
        seed = self.seed if seed is None else seed
        out = mdl.synthesize(self.params_, check_cepstra(X), self.temperature, seed, self.pre_emphasis)
        return out.samples

    def lsd(self, X) -> float:
        """Mean LSD in dB to the reference filters over the active frames of signals X."""
        check_is_fitted(self, "params_")
        data = sequences_from_corpus(check_signals(X), self.train_config(), self._analysis())
        cep = data.features.reshape(-1, data.features.shape[-1])
        active = data.active.ravel()
        lpc = self.transform(cep[active])
        return float(np.mean(log_spectral_distance(lpc, data.lpc_ref.reshape(-1, lpc.shape[-1])[active])))

    def score(self, X, y=None) -> float:
        return -self.lsd(X)

    # persistence -------------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        mdl.save_checkpoint(self.params_, path, extra={"estimator": self.get_params(), "pre_emphasis": self.pre_emphasis})

    @classmethod
    def load(cls, path) -> "EndToEndLPCNet":
        params, header = mdl.load_checkpoint(path)
        est = cls(**header.get("extra", {}).get("estimator", {}))
        est.params_ = params
        est.history_ = []
        est.freeze_check_ = None
        return est
