"""Screened central-difference gradient verification shared by test modules.

A coordinate is only compared when central-difference estimates at steps
h, h/2 and h/8 all agree: disagreement means the interval straddles a
ReLU/max-pool tie point (or extreme curvature), where a finite difference
does not estimate the point derivative.  The h/8 probe catches ties lying
inside the half-step interval, which pollute the two coarse estimates by
similar amounts.  Screening never looks at the analytic value, so it
cannot mask a wrong gradient.
"""

import numpy as np
import torch

STEP = 1e-4
SCREEN_RTOL = 3e-4
SCREEN_ATOL = 1e-7
CHECK_RTOL = 1e-3
CHECK_ATOL = 1e-6


def central_difference(objective, flat, idx, step):
    orig = flat[idx].item()
    with torch.no_grad():
        flat[idx] = orig + step
        up = objective().item()
        flat[idx] = orig - step
        down = objective().item()
        flat[idx] = orig
    return (up - down) / (2 * step)


def check_parameter_gradients(model, objective, rng, min_coords=50, max_attempts=500):
    """Compare autograd parameter gradients against screened central differences.

    Each coordinate must satisfy |analytic - fd| <= atol + rtol * scale with
    rtol 1e-3 at step 1e-4 (the atol floor covers coordinates whose true
    gradient is below finite-difference resolution, where a purely relative
    criterion is vacuous).  Returns (checked, rejected, worst_rel) with
    worst_rel taken over coordinates of meaningful magnitude (> 1e-4).
    """
    model.zero_grad()
    objective().backward()
    params = [(name, p) for name, p in model.named_parameters() if p.grad is not None]

    checked = 0
    rejected = 0
    worst_rel = 0.0
    attempts = 0
    while checked < min_coords:
        attempts += 1
        assert attempts <= max_attempts, (
            f"only {checked} smooth coordinates found in {max_attempts} attempts"
        )
        name, p = params[attempts % len(params)]
        flat = p.detach().reshape(-1)
        idx = int(rng.integers(flat.numel()))
        g_h = central_difference(objective, flat, idx, STEP)
        g_half = central_difference(objective, flat, idx, STEP / 2)
        g_eighth = central_difference(objective, flat, idx, STEP / 8)
        scale = max(abs(g_h), abs(g_half), abs(g_eighth))
        if max(abs(g_h - g_half), abs(g_h - g_eighth)) > SCREEN_ATOL + SCREEN_RTOL * scale:
            rejected += 1
            continue
        analytic = p.grad.reshape(-1)[idx].item()
        diff = abs(g_h - analytic)
        magnitude = max(abs(g_h), abs(analytic))
        assert diff <= CHECK_ATOL + CHECK_RTOL * magnitude, (
            f"{name}[{idx}]: analytic={analytic}, central-difference={g_h}, "
            f"diff={diff}"
        )
        if magnitude > 1e-4:
            worst_rel = max(worst_rel, diff / magnitude)
        checked += 1
    return checked, rejected, worst_rel
