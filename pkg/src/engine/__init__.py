# Tensor, tape and differentiable primitives
