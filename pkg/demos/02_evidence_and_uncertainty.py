"""Dirichlet evidence arithmetic: from concentration to probabilities,
uncertainty mass, and the two evidence losses.

Shows how expected probability and uncertainty follow from a
concentration vector, why the all-ones vector means total ignorance,
and how the error and KL losses move as evidence accumulates on the
right or the wrong class.
"""

import numpy as np

import protoscope.autodiff as ad
from protoscope.evidential import (dirichlet_covariance, error_loss,
                                   expected_probability, kl_uniform_loss,
                                   uncertainty_mass)

alpha = np.array([3.5, 4.5, 5.5, 2.5])
print(f"concentration      {alpha}")
print(f"expected p         {expected_probability(alpha)}")
print(f"uncertainty mass   {uncertainty_mass(alpha):.4f}  (4 classes / total 16)")

print("\ntotal ignorance: alpha all ones")
ones = np.ones(4)
print(f"expected p         {expected_probability(ones)}")
print(f"uncertainty mass   {uncertainty_mass(ones):.4f}")

# the losses, as evidence for the true class grows
print("\nevidence on the TRUE class drives both losses down:")
y = np.array([[1.0, 0.0, 0.0, 0.0]])
for e in (0.0, 2.0, 8.0, 32.0):
    a = np.ones((1, 4))
    a[0, 0] += e
    err = error_loss(ad.Tensor(a), ad.Tensor(y)).item()
    kl = kl_uniform_loss(ad.Tensor(a), ad.Tensor(y)).item()
    print(f"  evidence {e:5.1f}  error {err:.4f}  misleading-KL {kl:.4f}")

print("\nevidence on a WRONG class leaves error high and grows the KL:")
for e in (0.0, 2.0, 8.0, 32.0):
    a = np.ones((1, 4))
    a[0, 2] += e
    err = error_loss(ad.Tensor(a), ad.Tensor(y)).item()
    kl = kl_uniform_loss(ad.Tensor(a), ad.Tensor(y)).item()
    print(f"  evidence {e:5.1f}  error {err:.4f}  misleading-KL {kl:.4f}")

# concentrating total mass on one component minimizes total covariance
print("\ntotal |covariance| over concentrations summing to 12:")
for a in ([4.0, 4.0, 4.0], [6.0, 5.0, 1.0], [10.0, 1.0, 1.0]):
    total = np.abs(dirichlet_covariance(np.array(a))).sum()
    print(f"  alpha {a}  sum|cov| {total:.6f}")
