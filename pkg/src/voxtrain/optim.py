"""Optimizers and learning-rate schedulers behind a name-keyed factory.

adam/adamw/sgd come from torch.optim. adabound is implemented here: Adam-style
moments whose effective per-parameter step size is clipped between bounds that
tighten toward a final SGD-like rate as training progresses.
"""

from __future__ import annotations

import math

import torch

from .errors import UnknownName

OPTIMIZERS = ("adam", "adamw", "adabound", "sgd")
SCHEDULERS = ("cosine", "step", "plateau", "none")


class AdaBound(torch.optim.Optimizer):
    """Adaptive steps clipped into a band that converges to ``final_lr``.

    lower_t = final_lr * (1 - 1/(gamma*t + 1)), upper_t = final_lr * (1 + 1/(gamma*t));
    the band starts at (0, inf) and narrows to final_lr, so behaviour moves from
    Adam toward SGD over time.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), final_lr=0.1,
                 gamma=1e-3, eps=1e-8, weight_decay=0.0):
        if lr <= 0:
            raise ValueError(f"lr must be > 0, got {lr}")
        defaults = dict(lr=lr, betas=betas, final_lr=final_lr, gamma=gamma,
                        eps=eps, weight_decay=weight_decay, base_lr=lr)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                if group["weight_decay"] != 0:
                    grad = grad.add(p, alpha=group["weight_decay"])
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                t = state["step"]
                exp_avg, exp_avg_sq = state["exp_avg"], state["exp_avg_sq"]
                exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
                exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)

                step_size = group["lr"] * math.sqrt(1 - beta2 ** t) / (1 - beta1 ** t)
                final_lr = group["final_lr"] * group["lr"] / group["base_lr"]
                lower = final_lr * (1 - 1 / (group["gamma"] * t + 1))
                upper = final_lr * (1 + 1 / (group["gamma"] * t))
                eta = (step_size / (exp_avg_sq.sqrt() + group["eps"])).clamp_(lower, upper)
                p.add_(-eta * exp_avg)
        return loss


def make_optimizer(name: str, params, hyper: dict) -> torch.optim.Optimizer:
    lr = float(hyper.get("lr", 1e-3))
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    wd = float(hyper.get("weight_decay", 0.0))
    if name == "adam":
        return torch.optim.Adam(params, lr=lr, betas=tuple(hyper.get("betas", (0.9, 0.999))),
                                weight_decay=wd)
    if name == "adamw":
        return torch.optim.AdamW(params, lr=lr, betas=tuple(hyper.get("betas", (0.9, 0.999))),
                                 weight_decay=wd)
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr, momentum=float(hyper.get("momentum", 0.9)),
                               weight_decay=wd)
    if name == "adabound":
        return AdaBound(params, lr=lr, betas=tuple(hyper.get("betas", (0.9, 0.999))),
                        final_lr=float(hyper.get("final_lr", 0.1)),
                        gamma=float(hyper.get("adabound_gamma", 1e-3)), weight_decay=wd)
    raise UnknownName("optimizer", name, OPTIMIZERS)


class Scheduler:
    """Uniform epoch-stepped interface over the torch schedulers.

    ``step`` is called once per epoch with the monitored validation value,
    which only the plateau policy consumes.
    """

    def __init__(self, name: str, optimizer, hyper: dict, total_epochs: int,
                 monitor_mode: str = "min"):
        self.name = name
        self.optimizer = optimizer
        if name == "none":
            self._impl = None
        elif name == "cosine":
            self._impl = torch.optim.lr_scheduler.CosineAnnealingLR(
                optimizer, T_max=max(total_epochs, 1))
        elif name == "step":
            self._impl = torch.optim.lr_scheduler.StepLR(
                optimizer, step_size=int(hyper.get("step_size", 10)),
                gamma=float(hyper.get("factor", 0.1)))
        elif name == "plateau":
            self._impl = torch.optim.lr_scheduler.ReduceLROnPlateau(
                optimizer, mode=monitor_mode, factor=float(hyper.get("factor", 0.1)),
                patience=int(hyper.get("plateau_patience", 5)))
        else:
            raise UnknownName("scheduler", name, SCHEDULERS)

    def step(self, monitored_value: float | None = None):
        if self._impl is None:
            return
        if self.name == "plateau":
            if monitored_value is not None:
                self._impl.step(monitored_value)
        else:
            self._impl.step()

    @property
    def lr(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])


def make_scheduler(name: str, optimizer, hyper: dict, total_epochs: int,
                   monitor_mode: str = "min") -> Scheduler:
    return Scheduler(name, optimizer, hyper, total_epochs, monitor_mode)
