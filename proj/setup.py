"""Builds the _semd extension by delegating to the CMake project."""

import os
import shutil
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = Path(__file__).parent.resolve()
        build_dir = Path(self.build_temp).resolve() / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)

        subprocess.run(
            [
                "cmake",
                "-S", str(source_dir),
                "-B", str(build_dir),
                "-DCMAKE_BUILD_TYPE=Release",
                f"-DPython3_EXECUTABLE={sys.executable}",
            ],
            check=True,
        )
        subprocess.run(
            [
                "cmake",
                "--build", str(build_dir),
                "--target", "_semd",
                "-j", str(os.cpu_count() or 2),
            ],
            check=True,
        )

        built = sorted((build_dir / "python" / "semd").glob("_semd.*"))
        if not built:
            raise RuntimeError("CMake build produced no _semd extension")
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(built[0], dest)


setup(ext_modules=[CMakeExtension("semd._semd")], cmdclass={"build_ext": CMakeBuild})
