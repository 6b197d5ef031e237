# Pin BLAS / OpenMP threading before numpy loads anywhere: the training
# budgets are stated for one CPU core and single-threaded kernels keep
# reruns bit-identical.
import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")
