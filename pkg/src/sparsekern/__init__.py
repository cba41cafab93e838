"""sparsekern: sparse multi-layer kernel decomposition and fast SV filtering.

Approximates large dense convolution kernels as short chains of sparse
offset/weight layers fit by gradient descent on the impulse response, then
interpolates bases of such filters for spatially varying effects.
"""

from .kernels import (
    DenseKernel,
    KernelError,
    KernelSpec,
    delta_kernel,
    disk_kernel,
    gaussian_kernel,
    generate_kernel,
    heart_kernel,
    load_kernel_image,
    polygon_kernel,
    read_image,
    ring_kernel,
    save_kernel_image,
    star_kernel,
    write_image,
)
from .engine import (
    EngineError,
    KernelComplex,
    SparseLayer,
    TruncationError,
    apply_complex,
    apply_sparse_layer,
    auto_canvas,
    bilinear_sample,
    dense_convolve,
    psnr,
    required_canvas,
    sse,
    synthesize_ir,
)
from .optim import (
    AdamState,
    ConstraintConfig,
    FitResult,
    LossKind,
    OptimError,
    TrainConfig,
    adam_step,
    backward,
    fit,
    load_theta,
    loss,
    parse_layout,
    save_theta,
)
from .initializers import (
    InitStrategy,
    bbox_random_init,
    build_init,
    hybrid_init,
    radial_init,
    ss_init,
    support_rejection_sample,
)
from .baselines import (
    LowRankFilter,
    PSTConfig,
    PSTResult,
    lowrank_decompose,
    lowrank_filter,
    pst_fit,
)
from .svfilter import (
    FilterBasis,
    FilterBasisGrid,
    build_basis,
    build_basis_grid,
    interp_weights,
    load_basis,
    save_basis,
    sv_filter,
    sv_ground_truth,
    synthesize_filter,
)

__version__ = "0.1.0"
