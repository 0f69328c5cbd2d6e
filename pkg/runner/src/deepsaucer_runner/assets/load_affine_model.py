"""Model-load script: rebuilds a tiny affine predictor from saved parameters.

The parameter file is JSON, ``{"weights": [[..], [..]], "bias": [..]}``
with a 2x2 weight matrix and a length-2 bias, and its path comes in via
the run param ``model_file``. The returned model is a plain callable
computing f(x) = Wx + b over length-2 vectors, so it works the same no
matter which framework originally trained the weights.
"""


import json


def load_model(ctx):
    path = ctx.params.get("model_file")
    if not path:
        raise ValueError("params must supply 'model_file'")
    with open(path, "r", encoding="utf-8") as fh:
        document = json.load(fh)
    weights = document["weights"]
    bias = document["bias"]
    if (
        len(weights) != 2
        or any(len(row) != 2 for row in weights)
        or len(bias) != 2
    ):
        raise ValueError("model file must hold a 2x2 weight matrix and a length-2 bias")
    w = [[float(value) for value in row] for row in weights]
    b = [float(value) for value in bias]

    def predict(x):
        if len(x) != 2:
            raise ValueError("input must be a length-2 vector")
        return [
            w[0][0] * x[0] + w[0][1] * x[1] + b[0],
            w[1][0] * x[0] + w[1][1] * x[1] + b[1],
        ]

    return predict
