"""
Copyright 2024 The Posterior Calibration authors and contributors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
"""

"""
Run manifests.

Every CLI run writes one ``manifest.json`` next to its outputs recording the
command, every resolved parameter, the toolkit version and the SHA-256 of each
input file. The manifest holds no timestamps or host details, so two runs with
identical manifests produce byte-identical manifest files as well as outputs.
"""

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Union

# Handle both relative imports (when used as a module) and absolute imports (when run as script,
# or when imported by another module that was run as a script)
if not __package__:
    from prediction_store import file_digest
else:
    from .prediction_store import file_digest

MANIFEST_NAME = 'manifest.json'


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class RunManifest:
    """
    Reproducibility record of one command invocation.

    Attributes:
        command: Subcommand name, e.g. ``'fit-temp'``.
        parameters: Resolved parameter values (paths, k, scheme, grid, ...).
        version: Toolkit version.
        input_digests: Input path -> SHA-256 hex digest of its contents.
    """
    command: str
    parameters: Dict[str, Any]
    version: str
    input_digests: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def build(cls, command: str, parameters: Dict[str, Any], version: str,
              inputs: Iterable[Union[str, Path]] = ()) -> 'RunManifest':
        """Resolve parameters to JSON values and digest every input file."""
        digests = {str(path): file_digest(path) for path in inputs}
        return cls(command, _jsonable(dict(parameters)), version, digests)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, directory: Union[str, Path]) -> Path:
        """Write ``manifest.json`` into ``directory`` and return its path."""
        path = Path(directory) / MANIFEST_NAME
        path.write_text(self.to_json(), encoding='utf-8')
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'RunManifest':
        data = json.loads(Path(path).read_text(encoding='utf-8'))
        return cls(data['command'], data['parameters'], data['version'], data.get('input_digests', {}))


# Example usage and testing
if __name__ == "__main__":
    import tempfile

    print("Testing run manifest...\n")
    with tempfile.TemporaryDirectory() as tmp:
        source = Path(tmp) / 'dev.jsonl'
        source.write_text('{"logits": [1.0, 0.0], "label": 0}\n', encoding='utf-8')
        manifest = RunManifest.build('fit-temp', {'dev': source, 'bins': 10}, '0.0.0', [source])
        again = RunManifest.load(manifest.write(tmp))
        print(f"  digest: {again.input_digests[str(source)][:16]}...")
        print(f"  round trip equal: {again == manifest}")
    print("\nRun manifest test completed successfully!")
