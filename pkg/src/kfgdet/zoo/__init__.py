"""Model variants, parameter audits, weight files and toy training."""
from .audit import AuditRow, ParamAudit, audit_params, reduction
from .config import FLAGS, VARIANTS, ModelConfig, load_config, parse_config_text, save_config, variant_config
from .model import STRIDES, Model, build_model, dummy_input, kw_layers, warehouses
from .serialize import load_weights, read_weight_file, save_weights
from .train import SGD, LossResult, assign, ciou, loss_compute, train_loop, train_step
