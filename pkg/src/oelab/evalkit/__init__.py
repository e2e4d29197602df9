from oelab.evalkit.macs import (
    MacsReport,
    analytic_decoder_macs,
    analytic_encode_macs,
    measured_decode_macs,
    measured_encode_macs,
    tokenization_macs_ratio,
)
from oelab.evalkit.probes import (
    extract_features,
    knn_probe,
    linear_probe,
    probe_sweep,
)
from oelab.evalkit.ablation import ablation_configs, run_ablation_suite, sweep_pt
from oelab.evalkit.bench import bench_kernels, bench_patch_embed
from oelab.evalkit.gradnorms import gradnorm_report

__all__ = [
    "MacsReport",
    "analytic_encode_macs",
    "analytic_decoder_macs",
    "measured_encode_macs",
    "measured_decode_macs",
    "tokenization_macs_ratio",
    "extract_features",
    "knn_probe",
    "linear_probe",
    "probe_sweep",
    "ablation_configs",
    "run_ablation_suite",
    "sweep_pt",
    "bench_patch_embed",
    "bench_kernels",
    "gradnorm_report",
]
