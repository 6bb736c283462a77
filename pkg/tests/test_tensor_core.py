import io
import struct

import numpy as np
import pytest

from nomore.core import (
    Conv2d,
    Linear,
    Rng,
    SgdConfig,
    Tensor,
    add,
    avg_pool2x2,
    backward,
    check_gradients,
    conv2d,
    cross_entropy,
    flatten,
    global_avg_pool,
    kaiming_init,
    linear,
    load_tensors,
    mul,
    projection_loss,
    read_tensor,
    relu,
    save_tensors,
    scalar_add,
    scalar_mul,
    sgd_step,
    tensor_sum,
    write_tensor,
    zero_pad_channels,
)
from nomore.exceptions import FormatError, InvalidArgumentError, InvalidStateError


@pytest.mark.unit
class TestRng:
    """Rng 测试类"""

    def test_same_seed_same_stream(self):
        """测试同一种子产生相同序列"""
        assert np.array_equal(Rng(7).normal((3, 4)), Rng(7).normal((3, 4)))

    def test_substream_independent_of_consumption(self):
        """测试子流只取决于 (seed, key)"""
        used = Rng(1)
        used.normal(100)
        assert np.array_equal(used.substream(3, 2).normal(5), Rng(1).substream(3, 2).normal(5))

    def test_named_streams_differ(self):
        """测试不同名称的子流互不相同"""
        root = Rng(1)
        assert not np.array_equal(root.named("init").normal(4), root.named("order").normal(4))

    def test_draw_counter(self):
        """测试抽样计数"""
        rng = Rng(0)
        rng.normal((2, 3))
        rng.permutation(4)
        assert rng.draws == 10

    @pytest.mark.parametrize("seed", [-1, 2 ** 64])
    def test_invalid_seed(self, seed):
        """测试越界种子"""
        with pytest.raises(InvalidArgumentError):
            Rng(seed)


@pytest.mark.unit
class TestTensorOps:
    """张量算子测试类"""

    def test_shape_mismatch(self):
        """测试形状不匹配报错"""
        with pytest.raises(InvalidArgumentError):
            add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_backward_square(self):
        """测试 sum(x⊙x) 的梯度为 2x"""
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        backward(tensor_sum(mul(x, x)))
        assert np.allclose(x.grad, [2.0, -4.0, 6.0])

    def test_backward_accumulates(self):
        """测试重复 backward 时梯度累加"""
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(tensor_sum(x))
        backward(tensor_sum(x))
        assert np.array_equal(x.grad, [2.0, 2.0])

    def test_backward_requires_scalar(self):
        """测试非标量 loss 报错"""
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(InvalidArgumentError):
            backward(mul(x, x))

    def test_backward_without_tape(self):
        """测试没有需要梯度的输入时报错"""
        with pytest.raises(InvalidStateError):
            backward(tensor_sum(Tensor([1.0])))

    def test_scalar_ops_gradients(self):
        """测试 α、β 标量的梯度"""
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        alpha = Tensor(0.5, requires_grad=True)
        beta = Tensor(0.0, requires_grad=True)
        backward(tensor_sum(scalar_add(scalar_mul(x, alpha), beta)))
        assert float(alpha.grad) == pytest.approx(10.0)
        assert float(beta.grad) == pytest.approx(4.0)

    def test_scalar_mul_requires_scalar(self):
        """测试 α 必须是标量"""
        with pytest.raises(InvalidArgumentError):
            scalar_mul(Tensor(np.ones(2)), Tensor(np.ones(2)))

    def test_relu(self):
        """测试 relu"""
        assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_zero_pad_channels(self):
        """测试补零通道"""
        out = zero_pad_channels(Tensor(np.ones((2, 3, 4, 4))))
        assert out.shape == (2, 6, 4, 4)
        assert np.all(out.data[:, 3:] == 0)

    def test_avg_pool_odd_size(self):
        """测试奇数空间尺寸报错"""
        with pytest.raises(InvalidArgumentError):
            avg_pool2x2(Tensor(np.ones((1, 1, 3, 4))))

    def test_conv_channel_mismatch(self):
        """测试卷积通道不匹配报错"""
        with pytest.raises(InvalidArgumentError):
            conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((3, 1, 3, 3))))

    def test_conv_output_shape(self, rng):
        """测试步长 2、padding 1 的输出尺寸"""
        conv = Conv2d(3, 5, 3, rng, stride=2, padding=1)
        assert conv(Tensor(rng.normal((2, 3, 8, 8)))).shape == (2, 5, 4, 4)

    def test_linear_dimension_mismatch(self):
        """测试全连接维度不匹配报错"""
        with pytest.raises(InvalidArgumentError):
            linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.zeros(2)))


@pytest.mark.unit
class TestGradients:
    """中心差分梯度检查"""

    def test_linear(self, rng):
        """测试全连接梯度"""
        x = Tensor(rng.normal((4, 3)), requires_grad=True)
        layer = Linear(3, 2, rng.substream(1))
        loss_of = projection_loss(Tensor(np.zeros((4, 2))), rng.substream(2))
        result = check_gradients(lambda: loss_of(layer(x)), [x, layer.weight, layer.bias])
        assert result.passed, result.relative_errors

    def test_conv(self, rng):
        """测试卷积梯度（步长 2 + padding）"""
        x = Tensor(rng.normal((2, 2, 5, 5)), requires_grad=True)
        w = kaiming_init(rng.substream(1), 18, (3, 2, 3, 3))
        loss_of = projection_loss(Tensor(np.zeros((2, 3, 3, 3))), rng.substream(2))
        result = check_gradients(lambda: loss_of(conv2d(x, w, stride=2, padding=1)), [x, w], names=["x", "w"])
        assert result.passed, result.relative_errors

    def test_pooling(self, rng):
        """测试池化梯度"""
        x = Tensor(rng.normal((2, 3, 4, 4)), requires_grad=True)
        loss_of = projection_loss(Tensor(np.zeros((2, 3))), rng.substream(1))
        result = check_gradients(lambda: loss_of(global_avg_pool(avg_pool2x2(x))), [x])
        assert result.passed

    def test_cross_entropy(self, rng):
        """测试带标签平滑的交叉熵梯度"""
        logits = Tensor(rng.normal((5, 4)), requires_grad=True)
        labels = np.array([0, 1, 2, 3, 0])
        result = check_gradients(lambda: cross_entropy(logits, labels, 0.1), [logits])
        assert result.passed

    def test_single_wrong_element_detected(self):
        """测试只有一个梯度元素出错时，范数误差仍达标而逐元素误差报错"""
        weights = np.ones(900)
        weights[0] = 0.01
        wrong = weights.copy()
        wrong[0] = 0.015
        x = Tensor(np.linspace(-1.0, 1.0, 900), requires_grad=True)

        def build_loss():
            return Tensor._from_op(np.asarray((x.data * weights).sum()), (x,), lambda g: (wrong * float(g),))

        result = check_gradients(build_loss, [x], names=["x"])
        assert result.max_relative_error < result.tolerance
        assert result.elementwise_errors["x"] > 0.1
        assert not result.passed

    @pytest.mark.parametrize("instance", range(20))
    def test_random_instances(self, rng, instance):
        """测试 20 组随机输入下全连接、卷积与 ReLU 的梯度"""
        stream = rng.substream(instance)
        x = Tensor(stream.normal((3, 2, 4, 4)), requires_grad=True)
        w = kaiming_init(stream.substream(1), 18, (2, 2, 3, 3))
        layer = Linear(8, 3, stream.substream(2))
        loss_of = projection_loss(Tensor(np.zeros((3, 3))), stream.substream(3))

        def build_loss():
            pooled = avg_pool2x2(relu(conv2d(x, w, stride=1, padding=1)))
            return loss_of(layer(flatten(pooled)))

        result = check_gradients(build_loss, [x, w, layer.weight, layer.bias], names=["x", "w", "weight", "bias"])
        assert result.passed, (result.relative_errors, result.elementwise_errors)


@pytest.mark.unit
class TestCrossEntropy:
    """交叉熵测试类"""

    @pytest.mark.parametrize("smoothing", [0.0, 0.1])
    def test_uniform_logits(self, smoothing):
        """测试零 logits 的 loss 为 log K，与平滑系数无关"""
        loss = cross_entropy(Tensor(np.zeros((3, 10))), np.array([0, 4, 9]), smoothing)
        assert loss.item() == pytest.approx(np.log(10.0))

    def test_invalid_smoothing(self):
        """测试非法平滑系数"""
        with pytest.raises(InvalidArgumentError):
            cross_entropy(Tensor(np.zeros((1, 2))), np.array([0]), 1.0)

    def test_scalar_labels(self):
        """测试 0 维标签报参数错误而不是 IndexError"""
        with pytest.raises(InvalidArgumentError):
            cross_entropy(Tensor(np.zeros((1, 4))), np.array(2))

    @pytest.mark.parametrize("bad", [4, -1])
    def test_out_of_range_labels(self, bad):
        """测试越界标签（K=4 时的 4 与 -1）"""
        with pytest.raises(InvalidArgumentError):
            cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, bad, 1]))


@pytest.mark.unit
class TestSgd:
    """SGD 测试类"""

    def test_plain_step(self):
        """测试无动量无衰减时 p ← p − lr·g"""
        p = Tensor([1.0, 2.0], requires_grad=True)
        p.grad = np.array([0.5, -1.0])
        sgd_step([p], SgdConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0))
        assert np.allclose(p.data, [0.95, 2.1])

    def test_momentum_accumulates(self):
        """测试动量缓存"""
        p = Tensor([0.0], requires_grad=True)
        cfg = SgdConfig(learning_rate=1.0, momentum=0.5, weight_decay=0.0)
        for _ in range(2):
            p.grad = np.array([1.0])
            sgd_step([p], cfg)
        assert p.data[0] == pytest.approx(-2.5)

    def test_missing_grad(self):
        """测试参数缺少梯度"""
        with pytest.raises(InvalidStateError):
            sgd_step([Tensor([1.0], requires_grad=True)], SgdConfig())

    def test_invalid_config(self):
        """测试非法超参数"""
        with pytest.raises(InvalidArgumentError):
            SgdConfig(learning_rate=0.0)


@pytest.mark.unit
class TestSerialization:
    """张量转储格式测试类"""

    def test_header_layout(self):
        """测试头部为 rank 与各维度的小端 u32"""
        buffer = io.BytesIO()
        written = write_tensor(buffer, np.arange(6, dtype=np.float64).reshape(2, 3))
        raw = buffer.getvalue()
        assert written == len(raw) == 12 + 48
        assert struct.unpack("<III", raw[:12]) == (2, 2, 3)
        assert struct.unpack("<d", raw[12 + 8:12 + 16])[0] == 1.0

    def test_truncated_data(self):
        """测试数据截断时报错并给出偏移"""
        buffer = io.BytesIO()
        write_tensor(buffer, np.ones(4))
        with pytest.raises(FormatError):
            read_tensor(io.BytesIO(buffer.getvalue()[:-3]))

    def test_trailing_bytes(self, tmp_path):
        """测试文件末尾多余字节"""
        path = tmp_path / "weights.bin"
        save_tensors(path, [np.ones(2), np.zeros((1, 2))])
        arrays = load_tensors(path, 2)
        assert arrays[1].shape == (1, 2)
        with pytest.raises(FormatError):
            load_tensors(path, 1)
