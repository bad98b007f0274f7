"""Hand-written plain-LIF trainer used to cross-check the engine bit for bit.

Everything neuron-, gradient-, loss-, and optimizer-shaped is spelled out
here from scratch: the leaky integrate-and-fire update with hard reset, the
rectangle surrogate window, backpropagation through time with the reset path
detached, label-smoothed cross-entropy, momentum SGD with coupled weight
decay, the warmup+cosine schedule, shuffling, and best-validation selection.
Only the flat tensor container, the seeded RNG, and the matrix-multiply /
transpose kernels are shared with the package, so agreement between the two
is a real two-route check of the arithmetic, not a tautology.

Covers dense MLPs only (dense -> spiking -> ... -> decoder), which is all
the parity test needs.
"""

from array import array

from lnmnet.tensor import Rng, Tensor, matmul, matmul_ta, matmul_tb

import math


class ReferenceLif:
    """Fixed-architecture LIF MLP: [dense+bias, spiking]*L, then decoder."""

    def __init__(self, timesteps, weights, biases, decoder_weight,
                 threshold=0.5, decay=-0.5, width=1.0):
        self.timesteps = timesteps
        self.weights = [w.copy() for w in weights]
        self.biases = [b.copy() for b in biases]
        self.decoder = decoder_weight.copy()
        self.threshold = threshold
        self.decay = decay
        self.width = width

    # -- forward -----------------------------------------------------------

    def forward(self, xseq, record=False):
        """xseq is (T, B, in); returns (logits, caches).

        caches[l] is a list over t of (x_in, u_prev, u_next, o_prev) for
        hidden block l; caches[-1] is the decoder's per-t input spikes.
        """
        T, batch = xseq.shape[0], xseq.shape[1]
        frame = xseq.size // T
        nblocks = len(self.weights)
        membranes = [None] * nblocks
        spikes = [None] * nblocks
        caches = [[] for _ in range(nblocks)] + [[]]
        classes = self.decoder.shape[0]
        logits_acc = Tensor.zeros((batch, classes))
        inv_t = 1.0 / T
        th = self.threshold

        for t in range(T):
            x = Tensor((batch, xseq.shape[2]),
                       array("d", xseq.data[t * frame:(t + 1) * frame]))
            for l in range(nblocks):
                w, b = self.weights[l], self.biases[l]
                cur = matmul_tb(x, w)
                out_f = w.shape[0]
                for r in range(batch):
                    for j in range(out_f):
                        cur.data[r * out_f + j] = cur.data[r * out_f + j] + b.data[j]
                u_prev = membranes[l] if membranes[l] is not None else Tensor.zeros(cur.shape)
                o_prev = spikes[l] if spikes[l] is not None else Tensor.zeros(cur.shape)
                u_next = Tensor.zeros(cur.shape)
                o_next = Tensor.zeros(cur.shape)
                for i in range(cur.size):
                    u = u_prev.data[i]
                    cu = u
                    if cu < -1.0:
                        cu = -1.0
                    elif cu > 1.0:
                        cu = 1.0
                    drive = self.decay * cu
                    keep = 1.0 - o_prev.data[i]
                    un = (u + drive) * keep + cur.data[i]
                    u_next.data[i] = un
                    o_next.data[i] = 1.0 if un - th >= 0.0 else 0.0
                if record:
                    caches[l].append((x, u_prev, u_next, o_prev))
                membranes[l], spikes[l] = u_next, o_next
                x = o_next
            if record:
                caches[-1].append(x)
            m = matmul_tb(x, self.decoder)
            for i in range(m.size):
                logits_acc.data[i] = logits_acc.data[i] + m.data[i]
        logits = Tensor.zeros(logits_acc.shape)
        for i in range(logits.size):
            logits.data[i] = logits_acc.data[i] * inv_t
        return logits, caches

    # -- loss ----------------------------------------------------------------

    def loss_grad(self, logits, labels, smoothing):
        batch, m = logits.shape
        grad = Tensor.zeros((batch, m))
        loss = 0.0
        inv_b = 1.0 / batch
        uniform = smoothing / m
        for b in range(batch):
            label = labels[b]
            row = logits.data[b * m:(b + 1) * m]
            peak = max(row)
            exps = [math.exp(v - peak) for v in row]
            total = 0.0
            for e in exps:
                total += e
            log_total = math.log(total)
            row_loss = 0.0
            for c in range(m):
                log_p = (row[c] - peak) - log_total
                q = uniform + (1.0 - smoothing if c == label else 0.0)
                row_loss -= q * log_p
                grad.data[b * m + c] = (exps[c] / total - q) * inv_b
            loss += row_loss
        return loss * inv_b, grad

    # -- backward ------------------------------------------------------------

    def backward(self, caches, dlogits):
        """BPTT with the reset path detached.

        The credit recurrence per spiking block: a(t) = g(t)*surr'(u(t+1))
        plus the carry a(t+1)*(1 + f'(u(t)))*(1 - o(t)); u crossing the clip
        boundary zeroes f'.
        """
        T = self.timesteps
        nblocks = len(self.weights)
        th = self.threshold
        inv = 1.0 / self.width
        half = self.width / 2.0
        inv_t = 1.0 / T

        d_weights = [Tensor.zeros(w.shape) for w in self.weights]
        d_biases = [Tensor.zeros(b.shape) for b in self.biases]
        d_decoder = Tensor.zeros(self.decoder.shape)
        g_dec = matmul(dlogits, self.decoder)
        for i in range(g_dec.size):
            g_dec.data[i] = g_dec.data[i] * inv_t
        carries = [None] * nblocks

        for t in range(T - 1, -1, -1):
            m = matmul_ta(dlogits, caches[-1][t])
            for i in range(m.size):
                d_decoder.data[i] = d_decoder.data[i] + inv_t * m.data[i]
            g = g_dec
            for l in range(nblocks - 1, -1, -1):
                x_in, u_prev, u_next, o_prev = caches[l][t]
                a = Tensor.zeros(g.shape)
                carry = carries[l]
                for i in range(g.size):
                    d = u_next.data[i] - th
                    if d < 0.0:
                        d = -d
                    surr = inv if d < half else 0.0
                    av = g.data[i] * surr
                    if carry is not None:
                        av = av + carry.data[i]
                    a.data[i] = av
                if t > 0:
                    nxt = Tensor.zeros(g.shape)
                    for i in range(g.size):
                        u = u_prev.data[i]
                        deriv = self.decay if -1.0 <= u <= 1.0 else 0.0
                        keep = 1.0 - o_prev.data[i]
                        nxt.data[i] = a.data[i] * (deriv + 1.0) * keep
                    carries[l] = nxt
                dw = matmul_ta(a, x_in)
                for i in range(dw.size):
                    d_weights[l].data[i] = d_weights[l].data[i] + dw.data[i]
                rows, cols = a.shape
                for j in range(cols):
                    acc = 0.0
                    for r in range(rows):
                        acc += a.data[r * cols + j]
                    d_biases[l].data[j] = d_biases[l].data[j] + acc
                g = matmul(a, self.weights[l])
        return d_weights, d_biases, d_decoder

    # -- optimizer and schedule ------------------------------------------------

    @staticmethod
    def sgd(param, grad, vel, lr, momentum, wd):
        for i in range(param.size):
            v = momentum * vel.data[i] + grad.data[i] + wd * param.data[i]
            vel.data[i] = v
            param.data[i] = param.data[i] - lr * v

    @staticmethod
    def cosine_lr(epoch, total_epochs, base_lr, warmup_epochs):
        if epoch < warmup_epochs:
            return base_lr * (epoch + 1) / (warmup_epochs + 1)
        span = total_epochs - warmup_epochs
        progress = (epoch - warmup_epochs) / span
        return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))

    # -- data plumbing -----------------------------------------------------------

    @staticmethod
    def gather(inputs, indices):
        """(N, T, C) rows -> time-major (T, B, C)."""
        n, t = inputs.shape[0], inputs.shape[1]
        frame = inputs.size // (n * t)
        data = array("d")
        for step in range(t):
            for i in indices:
                off = (i * t + step) * frame
                data.extend(inputs.data[off:off + frame])
        return Tensor((t, len(indices)) + inputs.shape[2:], data)

    def accuracy(self, inputs, labels, batch_size):
        n = len(labels)
        correct = 0
        for start in range(0, n, batch_size):
            idx = list(range(start, min(start + batch_size, n)))
            x = self.gather(inputs, idx)
            logits, _ = self.forward(x, record=False)
            rows, cols = logits.shape
            for r in range(rows):
                best, best_c = logits.data[r * cols], 0
                for c in range(1, cols):
                    v = logits.data[r * cols + c]
                    if v > best:
                        best, best_c = v, c
                if best_c == labels[idx[r]]:
                    correct += 1
        return correct / n

    # -- training loop ------------------------------------------------------------

    def train(self, data, epochs, batch_size, lr_weights, momentum,
              weight_decay, label_smoothing, warmup_epochs, shuffle_rng: Rng):
        vel_w = [Tensor.zeros(w.shape) for w in self.weights]
        vel_b = [Tensor.zeros(b.shape) for b in self.biases]
        vel_d = Tensor.zeros(self.decoder.shape)
        n = len(data.train_labels)
        indices = list(range(n))
        best_acc = -1.0
        best = None

        for epoch in range(epochs):
            lr = self.cosine_lr(epoch, epochs, lr_weights, warmup_epochs)
            shuffle_rng.shuffle(indices)
            for start in range(0, n, batch_size):
                batch = indices[start:start + batch_size]
                x = self.gather(data.train_inputs, batch)
                labels = [data.train_labels[i] for i in batch]
                logits, caches = self.forward(x, record=True)
                _, dlogits = self.loss_grad(logits, labels, label_smoothing)
                dws, dbs, dd = self.backward(caches, dlogits)
                for l in range(len(self.weights)):
                    self.sgd(self.weights[l], dws[l], vel_w[l], lr, momentum, weight_decay)
                    self.sgd(self.biases[l], dbs[l], vel_b[l], lr, momentum, weight_decay)
                self.sgd(self.decoder, dd, vel_d, lr, momentum, weight_decay)
            val_acc = self.accuracy(data.val_inputs, data.val_labels,
                                    max(batch_size, 256))
            if val_acc > best_acc:
                best_acc = val_acc
                best = ([w.copy() for w in self.weights],
                        [b.copy() for b in self.biases],
                        self.decoder.copy())
        if best is not None:
            for l in range(len(self.weights)):
                self.weights[l].data[:] = best[0][l].data
                self.biases[l].data[:] = best[1][l].data
            self.decoder.data[:] = best[2].data
        return best_acc
