import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from heatcast.config import write_shard_files  # noqa: E402
from heatcast.errors import ConfigurationError  # noqa: E402

STUDIES_DIR = os.path.join("src", "studies")


def main():
    """
    Writes shard files for one or more studies:
    src/studies/<study>/config/shards/<k>.json = {"id": k, "count": N}.
    """
    args = sys.argv[1:]

    if not args or len(args) % 2 != 0:
        print("Usage: python shards.py <study1> <num_shards1> [<study2> <num_shards2> ...]")
        print("Example: python shards.py sweep 4 factor 2")
        sys.exit(1)

    try:
        for i in range(0, len(args), 2):
            study, num_shards_str = args[i], args[i + 1]
            study_dir = os.path.join(STUDIES_DIR, study)
            if not os.path.isdir(study_dir):
                print(f"Error: no study directory '{study_dir}'.")
                sys.exit(1)
            try:
                num_shards = int(num_shards_str)
            except ValueError:
                num_shards = 0
            try:
                write_shard_files(study_dir, num_shards)
            except ConfigurationError:
                print(f"Error: Invalid number of shards '{num_shards_str}' for study '{study}'. Please provide a positive integer.")
                sys.exit(1)
            print(f"Generated {num_shards} shard files for study '{study}'.")

    except OSError as e:
        print(f"A file system error occurred: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
