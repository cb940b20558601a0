"""Spot-check consistency and conservation of the numerical fluxes on random Euler states."""
import numpy as np

from dgforge import symexpr as se
from dgforge.fluxes import HLLE, LocalLaxFriedrichs, normal_flux
from dgforge.operators import euler_eigenvalues, euler_flux


def random_states(rng, k):
    rho = rng.uniform(0.5, 2.0, k)
    vel = rng.uniform(-1.0, 1.0, (k, 2))
    p = rng.uniform(0.5, 2.0, k)
    E = p / (0.4 * rho) + 0.5 * (vel ** 2).sum(axis=1)
    return np.stack([rho, rho * vel[:, 0], rho * vel[:, 1], rho * E], axis=1)


def main(k=1000, seed=0):
    rng = np.random.default_rng(seed)
    a = se.as_vector([se.symbol(f"a{j}") for j in range(4)])
    b = se.as_vector([se.symbol(f"b{j}") for j in range(4)])
    n = se.as_vector([se.symbol("n0"), se.symbol("n1")])
    A, B = random_states(rng, k), random_states(rng, k)
    th = rng.uniform(0, 2 * np.pi, k)
    N = np.stack([np.cos(th), np.sin(th)], axis=1)

    def env(L, R, nn):
        e = {f"a{j}": L[:, j] for j in range(4)}
        e.update({f"b{j}": R[:, j] for j in range(4)})
        e.update({"n0": nn[:, 0], "n1": nn[:, 1]})
        return e

    Fn = se.evaluate(normal_flux(euler_flux, a, n), env(A, A, N))
    for cls in (LocalLaxFriedrichs, HLLE):
        scheme = cls(euler_eigenvalues)
        scheme.setup(euler_flux, a, b, n)
        H = scheme.interior(euler_flux, a, b, n)
        cons = np.abs(se.evaluate(H, env(A, A, N)) - Fn).max()
        h1 = se.evaluate(H, env(A, B, N))
        consv = np.abs(h1 + se.evaluate(H, env(B, A, -N))).max()
        print(f"{cls.__name__:>20}: consistency {cons:.2e}, conservation {consv:.2e}")


if __name__ == "__main__":
    main()
