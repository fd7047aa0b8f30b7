import numpy as np
import pytest

from mergeforge import _pykernels
from mergeforge.tensorstore import Checkpoint, DType, TensorRecord

try:
    from mergeforge import _ckernels
except ImportError:  # extension not built
    _ckernels = None

REFERENCE_RECIPE = """\
slices:
  - sources:
      - model: lamm-mit/Llama3.1-8b-Instruct-CPT-SFT-DPO
        layer_range: [0, 32]
      - model: meta-llama/Meta-Llama-3.1-8B-Instruct
        layer_range: [0, 32]
merge_method: slerp
base_model: meta-llama/Meta-Llama-3.1-8B-Instruct
parameters:
  t:
    - filter: self_attn
      value: [0, 0.5, 0.3, 0.7, 1]
    - filter: mlp
      value: [1, 0.5, 0.7, 0.3, 0]
    - value: 0.5
dtype: bfloat16
"""

KERNEL_MODULES = [pytest.param(_pykernels, id="python")]
if _ckernels is not None:
    KERNEL_MODULES.append(pytest.param(_ckernels, id="compiled"))


def reference_recipe_text(n_layers: int = 32, dtype: str = "bfloat16") -> str:
    return REFERENCE_RECIPE.replace("[0, 32]", f"[0, {n_layers}]").replace("bfloat16", dtype)


def toy_transformer(seed: int, n_layers: int = 2, d: int = 48, hidden: int = 96, vocab: int = 128,
                    dtype: DType = DType.F32) -> Checkpoint:
    """Llama-shaped toy checkpoint with seeded Gaussian weights."""
    rng = np.random.default_rng(seed)
    shapes = {"model.embed_tokens.weight": (vocab, d), "model.norm.weight": (d,), "lm_head.weight": (vocab, d)}
    for i in range(n_layers):
        p = f"model.layers.{i}."
        for proj in ("q_proj", "k_proj", "v_proj", "o_proj"):
            shapes[p + f"self_attn.{proj}.weight"] = (d, d)
        shapes[p + "mlp.gate_proj.weight"] = (hidden, d)
        shapes[p + "mlp.up_proj.weight"] = (hidden, d)
        shapes[p + "mlp.down_proj.weight"] = (d, hidden)
        shapes[p + "input_layernorm.weight"] = (d,)
        shapes[p + "post_attention_layernorm.weight"] = (d,)
    recs = [TensorRecord.from_array(n, rng.standard_normal(s) * 0.02, dtype) for n, s in sorted(shapes.items())]
    return Checkpoint.from_records(recs)


@pytest.fixture
def reference_recipe_text_fixture():
    return REFERENCE_RECIPE


# --- acceptance reporting ---------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        label, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"AC{n:<2} {'PASS' if ok else 'FAIL'}  {label}  ({detail})")
