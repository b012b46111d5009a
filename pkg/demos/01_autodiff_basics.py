#!/usr/bin/env python3
"""Tour of the tensor engine: ops, gradients, and the gradient-reversal trick.

Run:  python demos/01_autodiff_basics.py
"""

import numpy as np

from flowalign import tensor as T
from flowalign.gradcheck import run_all
from flowalign.tensor import Tensor

# -- build a tiny graph and differentiate it ------------------------------------

x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
w = Tensor(np.array([[0.5], [-1.0]]), requires_grad=True)

y = T.matmul(x, w)          # (2, 1)
loss = T.mean(T.mul(y, y))  # mean of squared entries
loss.backward()

print("loss      :", float(loss.data))
print("d loss/d x:\n", x.grad)
print("d loss/d w:\n", w.grad)

# -- the same tensor used twice accumulates both contributions -------------------

a = Tensor(np.array(3.0), requires_grad=True)
out = T.add(T.mul(a, 2.0), T.mul(a, 5.0))  # 2a + 5a
out.backward()
print("\nd(2a + 5a)/da =", float(a.grad), "(expect 7)")

# -- gradient reversal: identity forward, sign-flipped backward ------------------

feat = Tensor(np.array([4.0, -8.0]), requires_grad=True)
rev = T.grad_reverse(feat, alpha=0.25)
print("\ngrad_reverse forward equals input:", np.array_equal(rev.data, feat.data))
T.sum_(rev).backward()
print("backward is -alpha * upstream:", feat.grad, "(expect [-0.25, -0.25])")

# -- every backward rule is verified against central finite differences ----------

print("\nfinite-difference verification of the full op suite:")
for r in run_all():
    print(f"  {r.name:28s} {'PASS' if r.passed else 'FAIL'}  max_rel_err={r.max_err:.2e}")
