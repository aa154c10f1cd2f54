import os
import json
import csv


class CW:
    """
    Base class for continuous file writers.
    """

    def __init__(self, file_name, overwrite=True, **kwargs):
        """Create a CW object.

        :param file_name: The name of the file to write to
        :type file_name: str
        :param overwrite: Whether to overwrite if the file already exists, defaults to True
        :type overwrite: bool, optional
        """
        self.file_name = file_name
        self.overwrite = overwrite

    def close(self):
        self.file.close()

    def write(self, item, flush=False):
        """Write a record to the file. This method should be implemented in subclasses.

        :param item: The record
        :type item: dict
        :param flush: Whether to force the file to be flushed after writing,
            defaults to False
        :type flush: bool, optional
        :raises NotImplementedError: if the method is not implemented
            and called from a subclass.
        """
        raise NotImplementedError

    def flush(self):
        self.file.flush()


class CSVCW(CW):
    """
    Class used to control the continuous writing of a list of dictionaries to a CSV file.
    Columns keep their first-seen order unless `sort_keys` is set.
    """

    def __init__(self, file_name, columns=None, sort_keys=False, **kwargs):
        super().__init__(file_name, **kwargs)
        self.sort_keys = sort_keys
        self.file = open(self.file_name, 'a+', newline='', encoding='utf-8')

        if not self.overwrite:
            # save previous data
            self.file.seek(0)
            csv_dict_reader = csv.DictReader(self.file)
            self.columns = list(csv_dict_reader.fieldnames or [])
            self.all_items = [dict(x) for x in csv_dict_reader]
        else:
            self.columns = []
            self.all_items = []

        for column in columns or []:
            if column not in self.columns:
                self.columns.append(column)

        self._reset_dict_writer()
        if columns and not self.all_items:
            self.file.truncate(0)
            self.csv_dict_writer.writeheader()

    def _reset_dict_writer(self):
        self.csv_dict_writer = csv.DictWriter(
            self.file, fieldnames=self.columns, lineterminator='\n')

    def write(self, item, flush=False):
        self.all_items.append(item)

        new_columns = [column for column in item.keys()
                       if column not in self.columns]
        if new_columns:  # new column(s) found, must rewrite whole file
            self.columns += new_columns
            if self.sort_keys:
                self.columns.sort()

            self.file.truncate(0)

            self._reset_dict_writer()
            self.csv_dict_writer.writeheader()
            self.csv_dict_writer.writerows(self.all_items)
        else:
            self.csv_dict_writer.writerow(item)

        if flush:
            self.flush()


class JSONLCW(CW):
    """
    Class used to control the continuous writing of a JSON lines.
    """

    def __init__(self, file_name, sort_keys=True, **kwargs):
        super().__init__(file_name, **kwargs)
        self.sort_keys = sort_keys
        self.file = open(self.file_name, 'a', encoding='utf-8')

    def write(self, item, flush=False):
        print(json.dumps(item, sort_keys=self.sort_keys),
              file=self.file, flush=flush)


class ContinuousWriter:
    _SUPPORTED_WRITERS = {
        'csv': CSVCW,
        'jsonl': JSONLCW,
    }

    def __init__(self, file_name=None, overwrite=True, format=None, **kwargs):
        """Create a ContinuousWriter object and its output file.

        :param file_name: The name of the file to write to
        :type file_name: str
        :param overwrite: Whether to overwrite if the file already exists, defaults to True
        :type overwrite: bool, optional
        :param format: The output format, defaults to None (use the extension to decide)
        :type format: str, optional
        """
        if file_name is None:
            raise AttributeError('File name not set')

        self.file_name = file_name
        self.overwrite = overwrite
        self.format = format or os.path.splitext(file_name)[1][1:].lower()

        writer_class = ContinuousWriter._SUPPORTED_WRITERS.get(self.format)
        if writer_class is None:
            raise ValueError(f'Unsupported output format: "{self.format}"')

        if not os.path.exists(self.file_name) or self.overwrite:
            ensure_parent_directory(self.file_name)
            open(self.file_name, 'w').close()  # create an empty file

        self.writer = writer_class(self.file_name, overwrite=self.overwrite, **kwargs)

    def write(self, item, flush=False):
        self.writer.write(item, flush)

    def write_all(self, items, flush=True):
        for item in items:
            self.write(item)
        if flush:
            self.writer.flush()

    def __enter__(self):
        return self

    def close(self):
        self.writer.close()

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def ensure_parent_directory(file_name):
    directory = os.path.dirname(file_name)
    if directory:  # (non-empty directory - i.e. not in current folder)
        os.makedirs(directory, exist_ok=True)


def write_json_document(file_name, document, indent=2, sort_keys=False):
    """Write a single JSON document. Floats keep their full repr
    (17 significant digits), so values survive a round trip exactly.

    :param file_name: Path of the output file
    :type file_name: str
    :param document: JSON-serialisable object
    :type document: dict
    """
    ensure_parent_directory(file_name)
    with open(file_name, 'w', encoding='utf-8') as json_file:
        json.dump(document, json_file, indent=indent, sort_keys=sort_keys)
        json_file.write('\n')


def read_json_document(file_name):
    with open(file_name, encoding='utf-8') as json_file:
        return json.load(json_file)


def read_csv_rows(file_name):
    with open(file_name, newline='', encoding='utf-8') as csv_file:
        return list(csv.DictReader(csv_file))
