"""dissipcert: certify or refute strict dissipativity of discrete-time optimal
control problems whose stage cost is a convex combination of several costs.

Core analyses live in the submodules (expr, model, equilibrium, lq, storage,
verifier, ocp); `dissipcert.service` exposes them over HTTP and
`dissipcert.cli` is a thin client for that service.
"""

__version__ = "0.1.0"
