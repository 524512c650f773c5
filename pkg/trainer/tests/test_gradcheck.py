import pytest

from aecctl_trainer.config import LOSSES
from aecctl_trainer.gradcheck import (
    error_head_gradients_are_zero,
    gradient_check,
    tiny_config,
)


@pytest.mark.parametrize("loss", LOSSES)
def test_gradients_match_finite_differences(loss):
    err = gradient_check(tiny_config(loss), eps=1e-4, frames=12)
    assert err <= 1e-3, f"{loss}: max relative gradient error {err:.3e}"


def test_gradients_other_topologies():
    for topology in ("hybrid", "broadband"):
        err = gradient_check(tiny_config("td_erle", topology=topology),
                             eps=1e-4, frames=8)
        assert err <= 1e-3, f"{topology}: {err:.3e}"


def test_error_head_disconnected_when_mask_forced_zero():
    assert error_head_gradients_are_zero()


def test_error_head_live_by_default():
    import torch

    from aecctl_trainer.train import build_model
    from aecctl_trainer.unroll import DifferentiableCanceller

    cfg = tiny_config("fd_mse")
    torch.manual_seed(5)
    model = build_model(cfg).double()
    canceller = DifferentiableCanceller(cfg, dtype=torch.float64)
    n = 11 * cfg.hop + cfg.dft_length
    gen = torch.Generator().manual_seed(6)
    signals = tuple(torch.randn(1, n, dtype=torch.float64, generator=gen)
                    for _ in range(3))
    out = canceller.run(model, *signals)
    out[cfg.loss].backward()
    head = model.head_error_mask
    assert head.weight.grad is not None
    assert head.weight.grad.abs().max() > 0.0
