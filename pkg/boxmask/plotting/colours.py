"""
Colours used in the boxmask figures.
"""

darkblue = "#114A56"
midblue = "#1A7282"
lightblue = "#6DA5AF"
lightpurple = "#875F74"
purple = "#592441"
grey = "#BEC1C2"
darkgrey = "#464747"

# baseline and BoxMask arms
baseline_colour = grey
boxmask_colour = midblue

improved_colour = midblue
worsened_colour = lightpurple

sampling_colours = {"uniform": darkblue, "strided": purple}
