"""Плотные тензоры с обратным автоматическим дифференцированием.

Реализованы ровно те операции, которые нужны сети: матричное
произведение, softmax по строкам, нормализация, поэлементные операции,
перестановки осей и свёртки-патчи. Все данные хранятся в float64.
"""
import logging

import numpy as np

from services.errors import ContractError, DimensionError, NonFiniteError

logger = logging.getLogger(__name__)


class Tensor:
    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op
        # градиент материализуется сразу только у листьев
        self.grad = np.zeros_like(self.data) if requires_grad and not self._parents else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        """Накапливает dL/dθ во всех достижимых листьях.

        Повторный вызов без zero_grad() складывает градиенты ещё раз.
        """
        if self.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss is not connected to any parameter")

        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = np.array(g) if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # операторы
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """Обучаемый тензор с уникальным именем внутри модели"""

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape})"


class Module:
    """Контейнер параметров с иерархическими именами"""

    def __init__(self, prefix: str = ""):
        self.prefix = prefix
        self.training = True
        self._params = {}
        self._children = []

    def parameter(self, name: str, data) -> Parameter:
        full = f"{self.prefix}.{name}" if self.prefix else name
        if full in self._params:
            raise ContractError(f"duplicate parameter name {full}")
        param = Parameter(data, full)
        self._params[full] = param
        return param

    def child(self, module: "Module") -> "Module":
        self._children.append(module)
        return module

    def named_parameters(self) -> dict:
        named = dict(self._params)
        for module in self._children:
            for name, param in module.named_parameters().items():
                if name in named:
                    raise ContractError(f"duplicate parameter name {name}")
                named[name] = param
        return named

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def train(self, mode: bool = True):
        self.training = mode
        for module in self._children:
            module.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()


def xavier_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _result(data, parents, backward, op: str) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Сворачивает градиент к форме операнда после broadcasting"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def _broadcast(fn, a: Tensor, b: Tensor, op: str) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e


# поэлементные операции

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast(np.add, a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast(np.subtract, a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _result(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast(np.multiply, a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _result(out, (a, b), backward, "mul")


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _result(-x.data, (x,), lambda g: (-g,), "neg")


def abs_(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def where(condition, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(condition, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def backward(g):
        return _unbroadcast(np.where(cond, g, 0.0), a.shape), _unbroadcast(np.where(cond, 0.0, g), b.shape)
    return _result(out, (a, b), backward, "where")


def dropout(x, p: float, train: bool, rng) -> Tensor:
    """Inverted dropout: в режиме eval это тождество"""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(mask))


# редукции

def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is not None:
        axis = _check_axis(axis, x.ndim)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)
    return _result(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[_check_axis(axis, x.ndim)]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax_rows(x) -> Tensor:
    """Softmax по последней оси со сдвигом на максимум"""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return _result(out, (x,), backward, "softmax")


def normalize(x, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) вдоль оси axis"""
    x = as_tensor(x)
    axis = _check_axis(axis, x.ndim)
    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered ** 2).mean(axis=axis, keepdims=True) + eps)
    xhat = centered * inv

    def backward(g):
        return (inv * (g - g.mean(axis=axis, keepdims=True) - xhat * (g * xhat).mean(axis=axis, keepdims=True)),)
    return _result(xhat, (x,), backward, "normalize")


def layer_norm(x, gamma, beta, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Нормализация вдоль axis и аффинное преобразование по последней оси.

    axis=-1 даёт обычный LayerNorm по признакам токена, axis=-2 считает
    статистики по токенам отдельно для каждого столбца (режим CI).
    """
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise DimensionError("layer_norm needs d >= 1")
    return add(mul(normalize(x, axis=axis, eps=eps), gamma), beta)


# операции над формой

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = _broadcast(np.matmul, a, b, "matmul")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _result(out, (a, b), backward, "matmul")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(_check_axis(a, x.ndim) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: invalid permutation {axes}")
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from e
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x, start_axis: int = 0) -> Tensor:
    x = as_tensor(x)
    start_axis = _check_axis(start_axis, x.ndim) if x.ndim else 0
    return reshape(x, x.shape[:start_axis] + (-1,))


def index(x, key) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data[key]
    except IndexError as e:
        raise DimensionError(f"index {key!r} out of range for shape {x.shape}") from e

    basic = all(isinstance(k, (int, np.integer, slice)) or k is Ellipsis or k is None
                for k in (key if isinstance(key, tuple) else (key,)))

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)
    return _result(np.array(out), (x,), backward, "index")


def swap_last(x) -> Tensor:
    """Транспонирование двух последних осей"""
    x = as_tensor(x)
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    axis = _check_axis(axis, tensors[0].ndim)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: ragged shapes {[t.shape for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def split(x, axis: int, parts: int) -> list:
    x = as_tensor(x)
    axis = _check_axis(axis, x.ndim)
    if parts < 1 or x.shape[axis] % parts:
        raise DimensionError(f"split: axis of size {x.shape[axis]} is not divisible into {parts} parts")
    step = x.shape[axis] // parts
    pieces = []
    for i in range(parts):
        key = [slice(None)] * x.ndim
        key[axis] = slice(i * step, (i + 1) * step)
        pieces.append(index(x, tuple(key)))
    return pieces


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack needs at least one tensor")
    if len({t.shape for t in tensors}) != 1:
        raise DimensionError(f"stack: ragged shapes {[t.shape for t in tensors]}")
    axis = _check_axis(axis, tensors[0].ndim + 1)
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return _result(out, tuple(tensors), backward, "stack")


def pad(x, pad_width) -> Tensor:
    """Дополнение нулями; pad_width в формате np.pad"""
    x = as_tensor(x)
    out = np.pad(x.data, pad_width)
    key = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, x.shape))
    return _result(out, (x,), lambda g: (g[key],), "pad")


# свёртки

def conv_patchify(x, kernel, bias, patch_size: int) -> Tensor:
    """Неперекрывающиеся P×P патчи с автодополнением нулями.

    x: (..., W, H), kernel: (D_e, 1, P, P), bias: (D_e,).
    Возвращает (..., N, D_e), N = ceil(W/P) * ceil(H/P); патчи
    перечисляются построчно по (блок W, блок H).
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    p = patch_size
    if p < 1:
        raise ContractError(f"patch size must be positive, got {p}")
    if x.ndim < 2:
        raise DimensionError(f"conv_patchify needs a (..., W, H) input, got {x.shape}")
    w, h = x.shape[-2:]
    if kernel.ndim != 4 or kernel.shape[1:] != (1, p, p):
        raise DimensionError(f"kernel must be (D_e, 1, {p}, {p}), got {kernel.shape}")
    d_e = kernel.shape[0]
    if bias.shape != (d_e,):
        raise DimensionError(f"bias must be ({d_e},), got {bias.shape}")

    lead = x.shape[:-2]
    k = len(lead)
    pw, ph = (-w) % p, (-h) % p
    padded = pad(x, [(0, 0)] * k + [(0, pw), (0, ph)])
    nw, nh = (w + pw) // p, (h + ph) // p
    patches = reshape(padded, lead + (nw, p, nh, p))
    patches = transpose(patches, tuple(range(k)) + (k, k + 2, k + 1, k + 3))
    patches = reshape(patches, lead + (nw * nh, p * p))
    weight = reshape(kernel, (d_e, p * p))
    return add(matmul(patches, transpose(weight)), bias)


def conv1d_embed(a, kernel, bias) -> Tensor:
    """Поточечная 1D-свёртка: (..., C_in, L) -> (..., C_out, L)"""
    a, kernel, bias = as_tensor(a), as_tensor(kernel), as_tensor(bias)
    if kernel.ndim != 3 or kernel.shape[2] != 1:
        raise DimensionError(f"conv1d kernel must be (C_out, C_in, 1), got {kernel.shape}")
    c_out, c_in, _ = kernel.shape
    if a.ndim < 2 or a.shape[-2] != c_in:
        raise DimensionError(f"conv1d expects {c_in} input channels, got shape {a.shape}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv1d bias must be ({c_out},), got {bias.shape}")
    return add(matmul(reshape(kernel, (c_out, c_in)), a), reshape(bias, (c_out, 1)))


def numerical_gradient(fn, tensor: Tensor, eps: float = 1e-5, flat_indices=None) -> np.ndarray:
    """Центральные конечные разности dfn/dtensor в выбранных элементах"""
    flat = tensor.data.reshape(-1)
    if flat_indices is None:
        flat_indices = range(flat.size)
    grads = []
    for i in flat_indices:
        original = flat[i]
        flat[i] = original + eps
        plus = float(fn())
        flat[i] = original - eps
        minus = float(fn())
        flat[i] = original
        grads.append((plus - minus) / (2 * eps))
    return np.array(grads)
