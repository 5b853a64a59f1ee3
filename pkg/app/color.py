import sys

from colorama import Fore, Style, init
from termcolor import colored


#Color Class so every part of the CLI that talks to the terminal goes through one place.
#Everything here writes to stderr: stdout is reserved for CSV / plot data.
class Color:
    init()

    #Resets all styles and colors
    @staticmethod
    def reset() -> None:
        print(Style.RESET_ALL, end="", file=sys.stderr)

    #Prints a diagnostic in a certain color and style. If no style is inputted, default is "bright"
    @staticmethod
    def printColorOutput(message: str, color: str, style: str = "bright") -> None:
        if not style:
            print(colored(message, color.lower()), file=sys.stderr)
        else:
            match style.lower():
                case "bright":
                    print(Style.BRIGHT + colored(message, color.lower()), file=sys.stderr)
                case "dim":
                    print(Style.DIM + colored(message, color.lower()), file=sys.stderr)
                case "normal":
                    print(Style.NORMAL + colored(message, color.lower()), file=sys.stderr)
        Color.reset()

    #Prints a message in bright red indicating an error has occurred
    @staticmethod
    def printError(message: str) -> None:
        print(Style.BRIGHT + Fore.RED + message, file=sys.stderr)
        Color.reset()
