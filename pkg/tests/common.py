import ast
import inspect
import os
import sys
import tempfile
from ast import NodeTransformer
from textwrap import dedent

import numpy as np
from _pytest.assertion.rewrite import AssertionRewriter

from fmcodec.pixels import Frame, PixelFormat


class AssertTransformer(NodeTransformer):
    def visit_FunctionDef(self, node):
        newfns = []
        for i, stmt in enumerate(node.body):
            if not isinstance(stmt, ast.Assert):
                raise Exception(
                    "@one_test_per_assert requires all statements to be asserts"
                )
            else:
                extra = {}
                if sys.version_info >= (3, 12):
                    extra["type_params"] = []
                newfns.append(
                    ast.FunctionDef(
                        name=f"{node.name}_assert{i + 1}",
                        args=node.args,
                        body=[stmt],
                        decorator_list=node.decorator_list,
                        returns=node.returns,
                        **extra,
                    )
                )
        return ast.Module(body=newfns, type_ignores=[])


def one_test_per_assert(fn):
    src = dedent(inspect.getsource(fn))
    filename = inspect.getsourcefile(fn)
    tree = ast.parse(src, filename)
    tree = tree.body[0]
    assert isinstance(tree, ast.FunctionDef)
    tree.decorator_list = []
    new_tree = AssertTransformer().visit(tree)
    ast.fix_missing_locations(new_tree)
    _, lineno = inspect.getsourcelines(fn)
    ast.increment_lineno(new_tree, lineno - 1)
    # Use pytest's assertion rewriter for nicer error messages
    AssertionRewriter(filename, None, None).run(new_tree)
    new_fn = compile(new_tree, filename, "exec")
    glb = fn.__globals__
    exec(new_fn, glb, glb)
    return None


class TemporaryDir:
    def __init__(self):
        self.path = os.path.realpath(tempfile.mkdtemp())

    def rel(self, name):
        return os.path.join(self.path, name)

    def write(self, name, contents):
        path = self.rel(name)
        mode = "wb" if isinstance(contents, bytes) else "w"
        with open(path, mode) as f:
            f.write(contents)
        return path

    def read(self, name):
        with open(self.rel(name), "rb") as f:
            return f.read()


def flat_frame(
    width=64, height=64, values=(128, 128, 128), format=PixelFormat.YUV444R
):
    planes = [np.full((height, width), float(v)) for v in values]
    return Frame(width, height, format, tuple(planes))


def random_frame(rng, width=64, height=64, format=PixelFormat.YUV444R):
    planes = rng.uniform(0, 255, size=(3, height, width))
    return Frame.from_stack(planes, format)


def smooth_plane(width, height, period=37.0, shift=0.0):
    ys, xs = np.indices((height, width), dtype=np.float64)
    return (
        128
        + 60 * np.sin(2 * np.pi * (xs + shift) / period)
        + 40 * np.cos(2 * np.pi * ys / (period * 1.3))
    )
