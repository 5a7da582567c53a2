"""Two-stage deconfounder pipeline for disparity-aware tabular prediction.

Stage 1 learns a substitute confounder per record with a propensity-weighted
conditional VAE; stage 2 predicts the outcome from features, sensitive
attributes and the substitute confounder through an attention-gated MLP.
Everything trains on a small reverse-mode autodiff engine built here.
"""
__version__ = "0.1.0"
