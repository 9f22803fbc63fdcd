"""Key-value memory that traces a student's mastery sample by sample.

The key matrix holds static concept encodings.  The value matrix is the
evolving mastery state: reading a sample blends value slots by relevancy
and predicts the loss the student will incur on it; writing absorbs the
observed outcome through gated erase/add updates.  Training minimizes the
RMSE between predicted and observed losses over one interaction's batch.
Samples inside the batch are processed sequentially (read, then write), and
gradients flow through the value-memory chain within that interaction only;
the memory entering the interaction is treated as a constant.

Shapes, with n samples, N concept slots, key width dk, value width dv:

    key        (N, dk)    concept encodings, trained
    value      (N, dv)    mastery state, written during teaching
    A          (n, dk)    per-sample embeddings for reading
    B          (2n, dv)   outcome embeddings; row i is "sample i predicted
                          correctly", row i + n is "predicted wrongly"
    W1, b1     (dv+dk, N) read summary -> knowledge vector f
    W2, b2     (N, n)     f -> per-sample loss estimate (column gather)
    We/be, Wa/ba (N+dv, dv)  erase and add heads of the write gate
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Array, DifferentiableBlock, sigmoid, softmax, uniform_init


@dataclass
class ReadResult:
    """Knowledge vector and loss estimate for one sample."""

    knowledge: Array  # (N,)
    est_loss: float
    relevancy: Array  # (N,)


@dataclass
class _StepCache:
    index: int
    row: int  # row of B selected by the outcome
    u: Array
    w: Array
    r: Array
    x: Array
    f: Array
    est: float
    j: Array
    v: Array
    e: Array
    a: Array
    memory_before: Array  # value memory this step read from


@dataclass
class _ChainCache:
    steps: list
    final_memory: Array


class KnowledgeTracer(DifferentiableBlock):
    """Trainable loss predictor with an external value memory."""

    def __init__(
        self,
        num_samples: int,
        num_concepts: int,
        key_dim: int = 50,
        value_dim: int = 50,
        *,
        rng: np.random.Generator,
    ) -> None:
        super().__init__()
        if min(num_samples, num_concepts, key_dim, value_dim) < 1:
            raise ValueError("all tracer dimensions must be positive")
        self.num_samples = int(num_samples)
        self.num_concepts = int(num_concepts)
        self.key_dim = int(key_dim)
        self.value_dim = int(value_dim)

        n, N, dk, dv = self.num_samples, self.num_concepts, key_dim, value_dim
        self.params["key"] = uniform_init(rng, (N, dk), fan_in=dk)
        self.params["A"] = uniform_init(rng, (n, dk), fan_in=dk)
        self.params["B"] = uniform_init(rng, (2 * n, dv), fan_in=dv)
        self.params["W1"] = uniform_init(rng, (dv + dk, N), fan_in=dv + dk)
        self.params["b1"] = np.zeros(N)
        self.params["W2"] = uniform_init(rng, (N, n), fan_in=N)
        self.params["b2"] = np.zeros(n)
        self.params["We"] = uniform_init(rng, (N + dv, dv), fan_in=N + dv)
        self.params["be"] = np.zeros(dv)
        self.params["Wa"] = uniform_init(rng, (N + dv, dv), fan_in=N + dv)
        self.params["ba"] = np.zeros(dv)
        self._finish_setup()

        self.value_memory = uniform_init(rng, (N, dv), fan_in=dv)

    # ------------------------------------------------------------------ reads

    def _check_index(self, sample_index: int) -> int:
        i = int(sample_index)
        if not 0 <= i < self.num_samples:
            raise ValueError(f"sample index {i} outside [0, {self.num_samples})")
        return i

    def relevancy(self, sample_index: int) -> Array:
        """Softmax attention of the sample's embedding over the key slots."""
        i = self._check_index(sample_index)
        return softmax(self.params["key"] @ self.params["A"][i])

    def read(self, sample_index: int) -> ReadResult:
        """Predict the student's loss on one sample; no state changes."""
        i = self._check_index(sample_index)
        u = self.params["A"][i]
        w = softmax(self.params["key"] @ u)
        r = self.value_memory.T @ w
        x = np.concatenate([r, u])
        f = np.tanh(self.params["W1"].T @ x + self.params["b1"])
        est = float(self.params["W2"][:, i] @ f + self.params["b2"][i])
        return ReadResult(knowledge=f, est_loss=est, relevancy=w)

    def read_batch(self, indices) -> tuple[Array, Array]:
        """Vectorized pure reads: knowledge matrix (m, N) and estimates (m,)."""
        idx = np.asarray(list(indices), dtype=int)
        if idx.size == 0:
            raise ValueError("empty read batch")
        if idx.min() < 0 or idx.max() >= self.num_samples:
            raise ValueError("sample index out of range")
        U = self.params["A"][idx]
        W = softmax(U @ self.params["key"].T)
        R = W @ self.value_memory
        X = np.concatenate([R, U], axis=1)
        F = np.tanh(X @ self.params["W1"] + self.params["b1"])
        est = np.sum(F * self.params["W2"][:, idx].T, axis=1) + self.params["b2"][idx]
        return F, est

    # ----------------------------------------------------------------- writes

    def write(self, sample_index: int, pred_error: int) -> None:
        """Absorb one observed outcome into the value memory.

        ``pred_error`` is 1 when the student predicted the label wrongly,
        0 when it was correct.  Only the value memory changes.
        """
        i = self._check_index(sample_index)
        if pred_error not in (0, 1):
            raise ValueError("pred_error must be 0 or 1")
        res = self.read(i)
        row = i + pred_error * self.num_samples
        j = self.params["B"][row]
        v = np.concatenate([res.knowledge, j])
        e = sigmoid(self.params["We"].T @ v + self.params["be"])
        a = np.tanh(self.params["Wa"].T @ v + self.params["ba"])
        w = res.relevancy
        self.value_memory = self.value_memory * (1.0 - np.outer(w, e)) + np.outer(w, a)

    def reset_value_memory(self, rng: np.random.Generator) -> None:
        """Fresh mastery state for a new episode; keys are untouched."""
        self.value_memory = uniform_init(rng, (self.num_concepts, self.value_dim), fan_in=self.value_dim)

    # --------------------------------------------------------------- training

    def _forward_chain(self, indices: Array, pred_errors: Array, memory: Array) -> _ChainCache:
        """Sequential read/write pass starting from ``memory`` (not mutated)."""
        Mv = memory.copy()
        steps = []
        for i, err in zip(indices, pred_errors):
            u = self.params["A"][i]
            w = softmax(self.params["key"] @ u)
            r = Mv.T @ w
            x = np.concatenate([r, u])
            f = np.tanh(self.params["W1"].T @ x + self.params["b1"])
            est = float(self.params["W2"][:, i] @ f + self.params["b2"][i])
            row = i + err * self.num_samples
            j = self.params["B"][row]
            v = np.concatenate([f, j])
            e = sigmoid(self.params["We"].T @ v + self.params["be"])
            a = np.tanh(self.params["Wa"].T @ v + self.params["ba"])
            memory_before = Mv
            Mv = Mv * (1.0 - np.outer(w, e)) + np.outer(w, a)
            steps.append(
                _StepCache(
                    index=i, row=row, u=u, w=w, r=r, x=x, f=f, est=est,
                    j=j, v=v, e=e, a=a, memory_before=memory_before,
                )
            )
        return _ChainCache(steps=steps, final_memory=Mv)

    def _backward_chain(self, cache: _ChainCache, actual_losses: Array) -> float:
        """Accumulate gradients of the batch RMSE; returns the RMSE.

        Runs the chain in reverse, carrying dL/dMv across the writes made
        earlier in the same batch.  The memory the chain started from gets
        no gradient (one-interaction truncation).
        """
        ests = np.array([s.est for s in cache.steps])
        resid = ests - actual_losses
        m = len(resid)
        rmse = float(np.sqrt(np.mean(resid**2)))
        if rmse == 0.0:
            return rmse
        dests = resid / (m * rmse)

        dv_, dk_ = self.value_dim, self.key_dim
        N = self.num_concepts
        G = np.zeros((N, dv_))  # dL/d(memory after this step's write)
        for step, dest in zip(reversed(cache.steps), reversed(dests)):
            w, e, a = step.w, step.e, step.a
            Mv0 = step.memory_before

            # write: Mv' = Mv0 * (1 - w e^T) + w a^T
            dMv0 = G * (1.0 - np.outer(w, e))
            dw = ((a[None, :] - Mv0 * e[None, :]) * G).sum(axis=1)
            de = -(G * Mv0 * w[:, None]).sum(axis=0)
            da = (G * w[:, None]).sum(axis=0)

            dze = de * e * (1.0 - e)
            self.grads["We"] += np.outer(step.v, dze)
            self.grads["be"] += dze
            dza = da * (1.0 - a**2)
            self.grads["Wa"] += np.outer(step.v, dza)
            self.grads["ba"] += dza
            dv = self.params["We"] @ dze + self.params["Wa"] @ dza
            df = dv[:N].copy()
            self.grads["B"][step.row] += dv[N:]

            # loss estimate: est = W2[:, i] . f + b2[i]
            df += dest * self.params["W2"][:, step.index]
            self.grads["W2"][:, step.index] += dest * step.f
            self.grads["b2"][step.index] += dest

            # knowledge vector: f = tanh(W1^T [r, u] + b1)
            dz1 = df * (1.0 - step.f**2)
            self.grads["W1"] += np.outer(step.x, dz1)
            self.grads["b1"] += dz1
            dx = self.params["W1"] @ dz1
            dr, du = dx[:dv_], dx[dv_:].copy()

            # read: r = Mv0^T w
            dw += Mv0 @ dr
            dMv0 += np.outer(w, dr)

            # relevancy: w = softmax(key @ u)
            dscores = w * (dw - w @ dw)
            self.grads["key"] += np.outer(dscores, step.u)
            du += self.params["key"].T @ dscores
            self.grads["A"][step.index] += du

            G = dMv0
        return rmse

    def chain_rmse(self, indices, actual_losses, pred_errors, memory: Array | None = None) -> float:
        """Pure RMSE of the sequential pass; used by gradient checks."""
        idx, losses, errs = self._check_train_args(indices, actual_losses, pred_errors)
        mem = self.value_memory if memory is None else memory
        cache = self._forward_chain(idx, errs, mem)
        ests = np.array([s.est for s in cache.steps])
        return float(np.sqrt(np.mean((ests - losses) ** 2)))

    def chain_loss_and_grads(self, indices, actual_losses, pred_errors, memory: Array | None = None) -> float:
        """RMSE of the sequential pass, with gradients accumulated."""
        idx, losses, errs = self._check_train_args(indices, actual_losses, pred_errors)
        mem = self.value_memory if memory is None else memory
        cache = self._forward_chain(idx, errs, mem)
        return self._backward_chain(cache, losses)

    def _check_train_args(self, indices, actual_losses, pred_errors):
        idx = np.asarray(list(indices), dtype=int)
        losses = np.asarray(actual_losses, dtype=float)
        errs = np.asarray(pred_errors, dtype=int)
        if idx.size == 0:
            raise ValueError("empty training batch")
        if losses.shape != idx.shape or errs.shape != idx.shape:
            raise ValueError("losses and prediction errors must align with the batch")
        if idx.min() < 0 or idx.max() >= self.num_samples:
            raise ValueError("sample index out of range")
        if not np.all(np.isfinite(losses)):
            raise ValueError("actual losses contain non-finite values")
        if not np.isin(errs, (0, 1)).all():
            raise ValueError("pred_errors must be 0 or 1")
        return idx, losses, errs

    def train_step(self, batch, actual_losses, pred_errors, opt) -> float:
        """One optimizer step on the batch RMSE; commits the writes.

        Returns the pre-step RMSE.  The memory committed is the one produced
        by the forward pass, i.e. written with the pre-step parameters.
        """
        idx = getattr(batch, "indices", batch)
        idx, losses, errs = self._check_train_args(idx, actual_losses, pred_errors)
        cache = self._forward_chain(idx, errs, self.value_memory)
        self.zero_grads()
        rmse = self._backward_chain(cache, losses)
        opt.step(self)
        self.value_memory = cache.final_memory
        return rmse
