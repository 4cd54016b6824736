"""
Configuration for the RNNM low-rank recovery toolkit
"""

VERSION = '0.3.0'

# Proximal-gradient / ADMM solver defaults
SOLVER_DEFAULTS = {
    'max_iters': 20000,
    'tol': 1e-6,               # certificate tolerance
    'stall_tol': 1e-10,        # relative objective change
    'stall_window': 5,         # consecutive stalled iterations before stopping
    'stall_progress': 0.01,    # certificate violation drop that keeps a flat run going
    'lipschitz_safety': 1.01,  # multiplies the power-iteration estimate of ||A||^2
    'power_iters': 200,
    'feasibility_tol': 1e-8,   # constrained NNM: ||b - A(X)|| - eps
    'admm_rho': 1.0,
    'admm_balance': 10.0,      # residual ratio that triggers a penalty update
    'admm_scale': 2.0,
    'admm_rho_min': 1e-4,
    'admm_rho_max': 1e6,
    'log_every': 1000,
}

# Restricted isometry constant estimation
RIC_DEFAULTS = {
    'samples': 10000,
    'margin': 0.05,            # added to Monte-Carlo lower bounds before gating
    'ascent_step': 0.05,       # divided by ||A||^2
    'ascent_steps': 200,
    'restarts': 50,
    'exact_max_n': 20,
    'exact_max_k': 6,
}

# Inequality checks on solver output
THEORY_TOLERANCES = {
    'abs': 1e-8,
    'rel': 1e-8,
    'beta2_boundary': 1e-15,
    'lemma1_max_n': 10,
    'lemma1_max_k': 4,
    'lemma1_tol': 1e-9,
}

# Campaign defaults (n1 = n2 = 5, k = rank, t = 2, eps = lambda / 2)
CAMPAIGN_DEFAULTS = {
    'n1': 5,
    'n2': 5,
    'm': 20,
    'rank': 1,
    'k': 1,
    't': 2.0,
    'lambda': 0.1,
    'epsilon': 0.05,
    'ensemble_kind': 'gaussian',
    'noise_kind': 'sphere-uniform-at-eps',
    'trials': 500,
    'success_threshold': 1e-2,
}

ENSEMBLE_KINDS = ('gaussian', 'coordinate', 'custom-path')
NOISE_KINDS = ('none', 'sphere-uniform-at-eps', 'sphere-uniform-scaled')
SOLVER_NAMES = ('rnnm', 'nnm', 'bpdn')
RIC_MODES = ('exact', 'mc', 'ascent')

LOGGING_DEFAULTS = {
    'level': 'INFO',
    'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    'file': None,
}
