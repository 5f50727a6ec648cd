from dataclasses import dataclass
from typing import Sequence

import numpy as np

from rlsnet.errors import ConfigurationError, DimensionError, NumericalError, SingularityError


@dataclass(frozen=True)
class RankOneUpdateResult(object):
    p_next: np.ndarray
    u: np.ndarray
    h: float


class LinalgManager(object):
    '''
    Dense double precision helpers behind every RLS update.
    '''

    @staticmethod
    def mean_rows(x: np.ndarray) -> np.ndarray:
        '''
        Column means of a matrix.

        :param x: M x N matrix
        :return: length N vector
        '''
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
            raise DimensionError(f'mean_rows needs a non-empty matrix, got shape {x.shape}')
        return x.mean(axis=0)

    @staticmethod
    def rank1_inverse_update(p: np.ndarray,
                             x_bar: np.ndarray,
                             lam: float,
                             k_eff: float,
                             symmetrize: bool = True) -> RankOneUpdateResult:
        '''
        Sherman-Morrison step for A_s = lam * A_{s-1} + k_eff * x_bar x_bar^T, carried on P = A^-1.

        :param p: N x N inverse autocorrelation P_{s-1}
        :param x_bar: averaged augmented input, length N
        :param lam: forgetting factor in (0, 1]
        :param k_eff: ratio factor times the count factor, > 0
        :param symmetrize: replace the result by (P + P^T) / 2
        :return: RankOneUpdateResult with P_s, u = P x_bar and h = lam + k_eff x_bar^T u
        '''
        p = np.asarray(p, dtype=np.float64)
        x_bar = np.asarray(x_bar, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DimensionError(f'P must be square, got shape {p.shape}')
        if x_bar.ndim != 1 or x_bar.shape[0] != p.shape[0]:
            raise DimensionError(f'x_bar of shape {x_bar.shape} does not match P of shape {p.shape}')
        if not 0.0 < lam <= 1.0:
            raise ConfigurationError(f'forgetting factor must lie in (0, 1], got {lam}')
        if not k_eff > 0.0:
            raise ConfigurationError(f'k_eff must be positive, got {k_eff}')

        u = p @ x_bar
        h = float(lam + k_eff * (x_bar @ u))
        if not np.isfinite(h) or h <= 0.0:
            raise SingularityError(f'rank-1 update is singular, h={h}')

        p_next = (1.0 / lam) * (p - (k_eff / h) * np.outer(u, u))
        if symmetrize:
            p_next = 0.5 * (p_next + p_next.T)
        if not np.all(np.isfinite(p_next)):
            raise NumericalError('inverse autocorrelation became non-finite')
        return RankOneUpdateResult(p_next=p_next, u=u, h=h)

    @staticmethod
    def direct_inverse_oracle(x_bars: Sequence[np.ndarray],
                              lam: float,
                              k_eff: float,
                              a0: np.ndarray) -> np.ndarray:
        '''
        Inverse of lam^s a0 + sum_i lam^(s-i) k_eff x_i x_i^T by explicit inversion.

        :param x_bars: averaged inputs x_1 .. x_s
        :param lam: forgetting factor
        :param k_eff: ratio factor times the count factor
        :param a0: symmetric positive definite starting autocorrelation
        :return: A_s^-1
        '''
        a = np.array(a0, dtype=np.float64, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f'a0 must be square, got shape {a.shape}')
        for x in x_bars:
            x = np.asarray(x, dtype=np.float64)
            if x.shape != (a.shape[0],):
                raise DimensionError(f'x of shape {x.shape} does not match a0 of shape {a.shape}')
            a = lam * a + k_eff * np.outer(x, x)
        try:
            inv = np.linalg.inv(a)
        except np.linalg.LinAlgError as e:
            raise SingularityError(f'accumulated autocorrelation is singular: {e}')
        if not np.all(np.isfinite(inv)) or np.linalg.cond(a) > 1.0 / np.finfo(np.float64).eps:
            raise SingularityError('accumulated autocorrelation is numerically singular')
        return inv

    @staticmethod
    def is_positive_definite(p: np.ndarray) -> bool:
        '''
        Cholesky check.

        :param p: square matrix
        :return: True when the Cholesky factorisation succeeds
        '''
        try:
            np.linalg.cholesky(np.asarray(p, dtype=np.float64))
            return True
        except np.linalg.LinAlgError:
            return False
