"""Central finite-difference gradient checking against autograd."""

import torch


def fd_grad_check(fn, params, h=1e-6, rel_tol=1e-4, max_coords=None, seed=0):
    """Compare autograd gradients of the scalar ``fn()`` against central
    finite differences, parameter tensor by parameter tensor.

    ``fn`` must rebuild its forward pass from the live parameter values on
    every call.  Relative error is measured norm-wise over the checked
    coordinates; tensors may be subsampled to ``max_coords`` coordinates
    (chosen deterministically) to bound runtime.
    """
    params = [p for p in params if p.requires_grad]
    assert params, "nothing to check"
    assert all(p.dtype == torch.float64 for p in params), "use float64 parameters"
    loss = fn()
    grads = torch.autograd.grad(loss, params)
    rng = torch.Generator().manual_seed(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.detach().view(-1)
        gflat = g.reshape(-1)
        n = flat.numel()
        if max_coords is not None and n > max_coords:
            idxs = torch.randperm(n, generator=rng)[:max_coords].tolist()
        else:
            idxs = range(n)
        fd, an = [], []
        for i in idxs:
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + h
                up = float(fn())
                flat[i] = orig - h
                down = float(fn())
                flat[i] = orig
            fd.append((up - down) / (2 * h))
            an.append(float(gflat[i]))
        fd_t, an_t = torch.tensor(fd), torch.tensor(an)
        denom = max(float(fd_t.norm()), float(an_t.norm()), 1e-12)
        rel = float((fd_t - an_t).norm()) / denom
        worst = max(worst, rel)
        assert rel <= rel_tol, f"gradient mismatch: rel err {rel:.3e} on {tuple(p.shape)}"
    return worst
