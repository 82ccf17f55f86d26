"""Regenerates tiny_backbone.onnx: conv(3->4, k3, s2) -> relu -> global avg pool -> flatten.

Input 1x3x32x32, output 1x4. Used by the ONNX embedding backend tests.
"""
import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper

rng = np.random.default_rng(0)
weights = numpy_helper.from_array(rng.standard_normal((4, 3, 3, 3)).astype(np.float32) * 0.2, "W")
bias = numpy_helper.from_array(np.zeros(4, np.float32), "B")
nodes = [
    helper.make_node("Conv", ["input", "W", "B"], ["c"], kernel_shape=[3, 3], strides=[2, 2]),
    helper.make_node("Relu", ["c"], ["r"]),
    helper.make_node("GlobalAveragePool", ["r"], ["p"]),
    helper.make_node("Flatten", ["p"], ["features"], axis=1),
]
graph = helper.make_graph(
    nodes,
    "tiny",
    [helper.make_tensor_value_info("input", TensorProto.FLOAT, [1, 3, 32, 32])],
    [helper.make_tensor_value_info("features", TensorProto.FLOAT, [1, 4])],
    [weights, bias],
)
model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 11)])
model.ir_version = 6
onnx.checker.check_model(model)
onnx.save(model, "tiny_backbone.onnx")
