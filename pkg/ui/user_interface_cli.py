import logging
from typing import Dict, List, Optional, Union

import pandas as pd

import config
from utils.io_utils import rows_to_frame, write_csv

logger = logging.getLogger(config.LOGGER_NAME)


class UserInterface:
    def display_results(self, results: Dict[str, Union[str, int, float, list]], title: str = "Results"):
        """
        Displaying a flat result summary to user, one "name: value" line per entry

        Args:
            results (Dict[str, Union[str, int, float, list]]): summary values
            title (str, optional): heading line. Defaults to "Results".

        Returns:
            None
        """

        self.log_to_user(f"\n{title}:")

        results_string = "\n".join(
            f"{name}: {value}" for name, value in results.items()
        )

        self.log_to_user(results_string)

    def emit_rows(self, rows: List[Dict], out: Optional[str], seed: Optional[int]) -> pd.DataFrame:
        """
        Writes result rows to the CSV at `out`, or prints them as CSV when no path was given

        Args:
            rows (List[Dict]): result rows
            out (Optional[str]): output path
            seed (Optional[int]): master seed, recorded in every row

        Returns:
            pd.DataFrame: the emitted frame
        """

        if out is None:
            frame = rows_to_frame(rows, seed)
            self.log_to_user(frame.to_csv(index=False, float_format=config.CSV_FLOAT_FORMAT).rstrip("\n"))
            return frame

        frame = write_csv(rows, out, seed)
        self.log_to_user(f"wrote {len(frame)} rows to {out}")
        return frame

    @staticmethod
    def log_to_user(text: str):
        """
        Logging to user

        Args:
            text (str): The text to be logged to the user

        Returns:
            None
        """

        logger.info("xpi: " + text)

        # console output is the user-facing channel; the file log keeps the full record
        print(text)
