"""How tight is the variational bound on a problem small enough to enumerate?

Four features means sixteen masks, so the marginal likelihood, the mask
posterior and the bound can all be computed exactly.
"""
import numpy as np

from bayesdrop import LogisticRegressionModel, MaskDistribution, PriorMask
from bayesdrop import lower_bound_exact, marginal_log_likelihood_exact, posterior_exact
from bayesdrop.mask_distribution import all_masks

rng = np.random.default_rng(0)
X = rng.normal(size=(5, 4))
Y = (X[:, 0] - X[:, 1] > 0).astype(int)
model = LogisticRegressionModel([2.0, -2.0, 0.1, 0.0])
prior = PriorMask.uniform(4)

log_ml = marginal_log_likelihood_exact(model, (X, Y), prior)
print(f"log marginal likelihood    {log_ml:.6f}")

# the bound for a few factorised trial distributions
for keep in ([0.5] * 4, [0.9, 0.9, 0.1, 0.1], [0.99, 0.99, 0.5, 0.5]):
    q = MaskDistribution.per_feature(keep)
    print(f"bound at keep={keep}  {lower_bound_exact(model, (X, Y), q, prior):.6f}")

# the true posterior closes the gap exactly, but it need not factorise
post = posterior_exact(model, (X, Y), prior)
print(f"bound at the posterior     {lower_bound_exact(model, (X, Y), post, prior):.6f}")

print("\nmost probable masks under the posterior:")
masks = all_masks(4)
for k in np.argsort(post)[::-1][:4]:
    print(f"  {masks[k]}  {post[k]:.3f}")

# per-feature posterior marginals: informative features are kept
print("posterior keep marginals:", np.round(post @ masks, 3))
