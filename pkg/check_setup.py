#!/usr/bin/env python3
"""
Preflight check before a long training or search run.
Verifies environment, imports, directories, the torch device and
(optionally) Elasticsearch and the pretrained weights cache.

    python check_setup.py --config configs/reference.yaml --fetch-weights
"""

import argparse
import os
import sys

from dotenv import load_dotenv

load_dotenv()


def check_setup(config_path=None, fetch_weights=False):
    """Run every check and return True when the setup is usable"""

    print("="*60)
    print("VEHICLE SEARCH - SETUP CHECK")
    print("="*60)

    results = []

    # 1. Environment
    print("\n1. Environment variables...")
    for name, default in [("DATA_DIR", "data"), ("LOG_DIR", "logs"), ("DEVICE", "cpu")]:
        value = os.getenv(name)
        print(f"   {'✅' if value else 'ℹ️ '} {name}={value or default}{'' if value else ' (default)'}")
    for name in ("SEARCH_API_KEY", "ADMIN_TOKEN"):
        print(f"   {'✅' if os.getenv(name) else '⚠️ '} {name} {'configured' if os.getenv(name) else 'not set (API routes will refuse requests)'}")

    # 2. Imports
    print("\n2. Imports...")
    for module in ("torch", "torchvision", "numpy", "yaml", "orjson", "models.search_net", "training.stage2"):
        try:
            __import__(module)
            print(f"   ✅ {module}")
            results.append(True)
        except ImportError as e:
            print(f"   ❌ {module}: {e}")
            results.append(False)
    try:
        import open_clip  # noqa: F401
        print("   ✅ open_clip (CLIP encoders available)")
    except ImportError:
        print("   ⚠️  open_clip missing (only the toy encoders can be used)")

    # 3. Config
    config = None
    print("\n3. Config...")
    try:
        from training.config import load_config
        config = load_config(config_path)
        print(f"   ✅ {config_path or 'defaults'} parsed (toy_mode={config.toy_mode}, encoders={config.encoders.kind})")
        config.backbone_config()
        results.append(True)
    except Exception as e:
        print(f"   ❌ {e}")
        results.append(False)

    # 4. Device
    print("\n4. Torch device...")
    try:
        import torch
        device = config.device if config else os.getenv("DEVICE", "cpu")
        torch.zeros(1, device=device)
        print(f"   ✅ {device} usable")
        results.append(True)
    except Exception as e:
        print(f"   ❌ device not usable: {e}")
        results.append(False)

    # 5. Directories
    print("\n5. Directories...")
    dirs = [os.getenv("DATA_DIR", "data"), os.getenv("LOG_DIR", "logs")]
    if config:
        dirs.append(config.data.build_dir)
    for dir_path in dirs:
        if os.path.exists(dir_path):
            print(f"   ✅ {dir_path} exists")
            results.append(True)
        else:
            print(f"   ❌ {dir_path} missing")
            results.append(False)
    if config:
        for name in ("train_manifest", "test_manifest", "queries"):
            path = config.data.path(name)
            print(f"   {'✅' if path.exists() else '⚠️ '} {path}")

    # 6. Weights
    if fetch_weights and config:
        print("\n6. Pretrained weights...")
        try:
            from providers.weights import ensure_architecture_weights
            path = ensure_architecture_weights(config.backbone_config().architecture_id)
            print(f"   ✅ {path}")
            results.append(True)
        except Exception as e:
            print(f"   ❌ {e}")
            results.append(False)

    # 7. Elasticsearch (optional)
    print("\n7. Elasticsearch...")
    from indexers.elasticsearch_client import get_es_url, ping
    if ping():
        print(f"   ✅ reachable at {get_es_url()}")
    else:
        print(f"   ⚠️  not reachable at {get_es_url()}")
        print("   (Only needed for index-gallery and the search API)")

    # Summary
    print("\n" + "="*60)
    passed = sum(results)
    total = len(results)
    print(f"Checks passed: {passed}/{total}")
    print("="*60)
    return passed == total


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Preflight check")
    parser.add_argument("--config", help="YAML training config")
    parser.add_argument("--fetch-weights", action="store_true", help="Download the backbone weights if missing")
    args = parser.parse_args()
    sys.exit(0 if check_setup(args.config, args.fetch_weights) else 1)
