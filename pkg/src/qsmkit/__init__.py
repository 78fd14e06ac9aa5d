"""qsmkit: a synthetic-phantom quantitative susceptibility mapping toolkit."""

__version__ = "0.1.0"

from .dipole import (
    GAMMA_BAR_MHZ_PER_T,
    DipoleKernel,
    dipole_kernel,
    field_from_phase,
    forward_field,
    kernel_from_volume,
    kernel_to_volume,
    phase_from_field,
    rotated_kernel,
)
from .metrics import MetricReport, RoiStats, compute_metrics, roi_stats
from .phantom import (
    PhantomSpec,
    Primitive,
    analytic_cylinder_field,
    analytic_sphere_field,
    brain_like_spec,
    render_phantom,
)
from .phase import VSharpConfig, erode_mask, laplacian_unwrap, vsharp, wrap_phase
from .recon import MediConfig, OrientationScan, TkdConfig, cosmos, medi_like, tkd
from .traindata import (
    LossWeights,
    PatchDataset,
    PatchRecord,
    augment,
    extract_patches,
    loss_gradient,
    loss_l1,
    loss_model,
    make_label_pair,
    patch_positions,
    read_qpatch,
    total_loss,
    write_qpatch,
)
from .volume import (
    KGrid,
    MaskVolume,
    RotationMatrix,
    Volume3,
    apply_mask,
    fft3,
    ifft3,
    make_kgrid,
    mean_referenced,
    resample_rotated,
    resample_rotated_mask,
)
