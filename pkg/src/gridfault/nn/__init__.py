from gridfault.nn.param import Parameter  # noqa: F401
from gridfault.nn.gradcheck import grad_check  # noqa: F401
from gridfault.nn.model import Model, ModelSpec, build_model  # noqa: F401
