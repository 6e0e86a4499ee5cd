import pytest
import torch
import yaml


def finite_difference_check(module, loss_fn, step=1e-4, floor=1e-12):
    """Largest per-tensor relative error between autograd and central
    finite differences over every parameter of ``module`` (float64).

    Relative error of a tensor is ``|g_auto - g_fd| / max(|g_auto|, |g_fd|)``
    in Euclidean norm. The denominator is floored at ``floor`` so that
    parameters whose true gradient vanishes (a bias feeding straight into
    a normalization) are judged by the absolute round-off instead.
    """
    module.zero_grad(set_to_none=True)
    loss_fn().backward()
    worst = {}
    for name, p in module.named_parameters():
        auto = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        numeric = torch.zeros_like(p)
        flat = p.data.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                numeric.view(-1)[i] = (up - down) / (2 * step)
        denom = max(auto.norm().item(), numeric.norm().item(), floor)
        worst[name] = (auto - numeric).norm().item() / denom
    return worst


@pytest.fixture
def fd_check():
    return finite_difference_check


@pytest.fixture(autouse=True)
def _float32_default():
    torch.set_default_dtype(torch.float32)
    yield
    torch.set_default_dtype(torch.float32)


SMALL_CONFIG = {
    "seed": 0,
    "data": {"n_train": 8, "n_val": 4, "image_size": 16},
    "model": {"base_channels": 8, "channel_multipliers": [1, 2], "head_dim": 8},
    "optim": {"steps": 6, "batch_size": 4, "checkpoint_every": 3},
    "knowledge": {"n_tokens": 2, "dim": 16},
}


@pytest.fixture
def small_config_file(tmp_path):
    """A seconds-scale experiment config written to YAML."""
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump({**SMALL_CONFIG, "out_dir": str(tmp_path / "run")}))
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
