"""Label-skew partition gallery.

Prints client-by-class count matrices for the Dirichlet partitioner at three
concentration levels and for the pathological fixed-class-budget partitioner.
Smaller alpha concentrates each class on fewer clients; the pathological
split caps every client at exactly c distinct classes.
"""

import numpy as np

from dfedsim import generate_pool
from dfedsim.data import dirichlet_partition, label_entropy, label_histogram, pathological_partition

pool = generate_pool(n_classes=10, dim=16, per_class=100, radius=4.0, noise=2.0, seed=0)
m = 10


def show(title, assignment):
    hist = label_histogram(pool, assignment)
    entropies = [label_entropy(row) for row in hist]
    print(f"\n{title}  (mean label entropy {np.mean(entropies):.3f} nats)")
    print("client | " + " ".join(f"c{k:<3d}" for k in range(pool.n_classes)))
    for i, row in enumerate(hist):
        print(f"  {i:4d} | " + " ".join(f"{int(x):<4d}" for x in row))


for alpha in (0.1, 1.0, 100.0):
    show(f"Dirichlet alpha={alpha}", dirichlet_partition(pool, m, alpha, seed=42))

show("pathological, 2 classes per client",
     pathological_partition(pool, m, c=2, seed=42))
