import numpy as np

from config.exceptions import DimensionError, NonFiniteError


def sgd_step(params, grads, state, config, frozen=()):
    """
    SGD with momentum and L2 weight decay, in place:
    v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.
    Tensors named in `frozen` keep their value and velocity. The learning
    rate is then recomputed for the next iteration.
    """
    for name, param in params.named_tensors():
        grad = grads[name]
        if grad.shape != param.shape:
            raise DimensionError(f"gradient for {name} has shape {grad.shape}, parameter {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError("non-finite gradient", tensor=name)

    for name, param in params.named_tensors():
        if name in frozen:
            continue
        velocity = state.velocity[name]
        velocity *= config.momentum
        velocity += grads[name] + config.weight_decay * param
        param -= state.lr * velocity

    state.iteration += 1
    state.lr = config.learning_rate(state.iteration)
    return params, state
